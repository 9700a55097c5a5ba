"""
Mean-square gap statistics between the N-agent population and the solved
consistency system, across a grid of population sizes.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import BaseModel, field_validator
from tqdm import tqdm

from population.backward import evaluate_backward
from population.costs import cost_parts
from population.simulate import simulate_population
from solver.diagnostics import solution_cost

logger = logging.getLogger(__name__)


class GapRow(BaseModel):
    N: int
    replications: int
    gap_x_avg: float
    gap_x_avg_se: float
    gap_y_avg: float
    gap_y_avg_se: float
    gap_x_indiv: float
    gap_x_indiv_se: float
    gap_x_indiv_max: float
    gap_y_indiv: float
    gap_y_indiv_se: float
    gap_y_indiv_max: float
    cost_gap: float                 # |E cost - J|, agents and replications pooled
    cost_gap_se: float
    cost_dispersion: float          # E |population mean cost - J| per replication
    cost_dispersion_se: float
    second_moment_x: float
    second_moment_y: float


class GapTable(BaseModel):
    rows: list[GapRow]
    limiting_cost: float

    @field_validator("rows")
    @classmethod
    def rows_sorted_by_N(cls, v):
        return sorted(v, key=lambda row: row.N)

    def column(self, name):
        return [(row.N, getattr(row, name)) for row in self.rows]


def _mean_and_se(samples):
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        return float(samples.mean()), 0.0
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(samples.size))


def _sup_square(difference):
    """sup over levels of |·|², for arrays shaped (..., levels, d)."""
    return np.max(np.sum(difference ** 2, axis=-1), axis=-1)


def gap_row(model, tree, cc, run, reference_cost):
    """Gap statistics of one evaluated run (run.y filled)."""
    x_paths = np.stack([cc.x.at(k)[run.nodes[..., k]] for k in range(tree.depth + 1)], axis=2)
    y_paths = np.stack([cc.y.at(k)[run.nodes[..., k]] for k in range(tree.depth + 1)], axis=2)

    gap_x_avg = _sup_square(run.x_avg - cc.m_x)                    # (R,)
    gap_y_avg = _sup_square(run.y_avg - cc.m_y)
    per_agent_x = _sup_square(run.x - x_paths)                       # (R, N)
    per_agent_y = _sup_square(run.y - y_paths)

    costs = cost_parts(model, tree, run)["total"]                    # (R, N)
    population_cost = costs.mean(axis=1)                            # (R,)

    x_avg, x_avg_se = _mean_and_se(gap_x_avg)
    y_avg, y_avg_se = _mean_and_se(gap_y_avg)
    x_ind, x_ind_se = _mean_and_se(per_agent_x.mean(axis=1))
    y_ind, y_ind_se = _mean_and_se(per_agent_y.mean(axis=1))
    mean_cost, c_gap_se = _mean_and_se(population_cost)
    c_disp, c_disp_se = _mean_and_se(np.abs(population_cost - reference_cost))
    return GapRow(
        N=run.N,
        replications=run.replications,
        gap_x_avg=x_avg,
        gap_x_avg_se=x_avg_se,
        gap_y_avg=y_avg,
        gap_y_avg_se=y_avg_se,
        gap_x_indiv=x_ind,
        gap_x_indiv_se=x_ind_se,
        gap_x_indiv_max=float(per_agent_x.mean(axis=0).max()),
        gap_y_indiv=y_ind,
        gap_y_indiv_se=y_ind_se,
        gap_y_indiv_max=float(per_agent_y.mean(axis=0).max()),
        cost_gap=abs(mean_cost - reference_cost),
        cost_gap_se=c_gap_se,
        cost_dispersion=c_disp,
        cost_dispersion_se=c_disp_se,
        second_moment_x=float(np.sum(run.x_avg ** 2, axis=-1).mean(axis=0).max()),
        second_moment_y=float(np.sum(run.y_avg ** 2, axis=-1).mean(axis=0).max()),
    )


def gap_statistics(model, tree, cc, n_grid, replications, seed, threads=1, show_progress=True):
    """Simulate and evaluate a population for every N in the grid."""
    if not n_grid:
        raise ValueError("N grid is empty")
    if replications < 1:
        raise ValueError("replications must be >= 1")
    reference_cost = solution_cost(model, tree, cc)

    def measure(N):
        run = simulate_population(model, tree, cc, N, seed, replications=replications)
        evaluate_backward(model, tree, cc, run)
        return gap_row(model, tree, cc, run, reference_cost)

    grid = sorted(int(N) for N in n_grid)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(tqdm(pool.map(measure, grid), total=len(grid), desc="Gap statistics", disable=not show_progress))
    for row in rows:
        logger.info("N=%d gap_x_avg=%.3e gap_y_avg=%.3e cost_gap=%.3e", row.N, row.gap_x_avg, row.gap_y_avg, row.cost_gap)
    return GapTable(rows=rows, limiting_cost=reference_cost)
