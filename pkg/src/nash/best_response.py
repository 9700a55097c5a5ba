"""
Empirical best-response gain of agent 1 (index 0) against the decentralized
strategy profile.

The measured ε̂(N) = max(0, J̄ − min over candidates) is a lower bound on the
true gain: only a fixed family of open-loop tree controls is searched. All
candidates replay the same agent paths (common random numbers).
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from control.convex_set import contains, project_many
from population.backward import evaluate_backward
from population.costs import cost_parts
from population.simulate import draw_leaves, simulate_population
from solver.cc_solver import solve_auxiliary
from solver.options import SolveOptions
from solver.scheme import TreeScheme
from tree.noise_tree import TreeProcess

logger = logging.getLogger(__name__)

ADMISSIBILITY_TOL = 1e-12


class CandidateSpec(BaseModel):
    """Deviation family: empirical-mean response, scaled/shifted strategy, random controls."""

    model_config = ConfigDict(extra="forbid")

    empirical_response: bool = True
    scales: list[float] = Field(default_factory=lambda: [0.5, 0.9, 1.1, 1.5])
    shifts: list[float] = Field(default_factory=lambda: [-0.1, 0.1])
    random_count: int = Field(default=4, ge=0)
    random_scale: float = Field(default=0.2, ge=0)

    def describe(self):
        parts = []
        if self.empirical_response:
            parts.append("empirical-mean response")
        if self.scales:
            parts.append(f"scales {self.scales}")
        if self.shifts:
            parts.append(f"shifts {self.shifts}")
        if self.random_count:
            parts.append(f"{self.random_count} random (scale {self.random_scale})")
        return "; ".join(parts) or "empty"


class NashRow(BaseModel):
    N: int
    replications: int
    baseline_cost: float
    best_candidate: str
    best_candidate_cost: float
    epsilon: float
    epsilon_se: float
    noise_floor: float
    deviation_gap_x: float
    candidate_count: int


def _project_levels(model, tree, levels):
    scheme = TreeScheme(model, tree)
    return [
        project_many(model.control_set, scheme.slices[k].R, values)[0]
        for k, values in enumerate(levels)
    ]


def build_candidates(model, tree, cc, spec, pilot=None, seed=0, opts=None):
    """
    Named admissible tree controls for the deviating agent. `pilot` is a run
    whose replication-averaged aggregates feed the empirical-mean response.
    """
    candidates = []
    if spec.empirical_response and pilot is not None:
        m_x = pilot.x_avg.mean(axis=0)
        m_y = pilot.y_avg.mean(axis=0)
        response = solve_auxiliary(model, tree, m_x, m_y, opts)
        candidates.append(("empirical_response", response.u))

    strategy = cc.u.values
    for scale in spec.scales:
        levels = _project_levels(model, tree, [scale * u for u in strategy])
        candidates.append((f"scale_{scale:g}", TreeProcess(model.m, levels)))
    for shift in spec.shifts:
        levels = _project_levels(model, tree, [u + shift for u in strategy])
        candidates.append((f"shift_{shift:g}", TreeProcess(model.m, levels)))
    for index in range(spec.random_count):
        # one stream per candidate so smaller families are prefixes of larger ones
        rng = np.random.default_rng([int(seed), index])
        noisy = [u + spec.random_scale * rng.standard_normal(u.shape) for u in strategy]
        candidates.append((f"random_{index}", TreeProcess(model.m, _project_levels(model, tree, noisy))))

    if not candidates:
        raise ValueError("Candidate family is empty")
    for name, control in candidates:
        if not all(contains(model.control_set, level, ADMISSIBILITY_TOL) for level in control.values):
            raise ValueError(f"Candidate {name} is not admissible")
    return candidates


def best_response_gain(model, tree, cc, N, candidate_spec, replications, seed, threads=1, opts=None):
    """Measured best-response gain ε̂(N) for one population size."""
    if replications < 1:
        raise ValueError("replications must be >= 1")
    opts = opts or SolveOptions()
    leaves = draw_leaves(tree, seed, replications, np.arange(N))

    baseline = simulate_population(model, tree, cc, N, seed, replications=replications, leaves=leaves)
    evaluate_backward(model, tree, cc, baseline)
    baseline_costs = cost_parts(model, tree, baseline)["total"][:, 0]

    candidates = build_candidates(model, tree, cc, candidate_spec, pilot=baseline, seed=seed, opts=opts)

    def evaluate(candidate):
        name, control = candidate
        run = simulate_population(
            model, tree, cc, N, seed, replications=replications, deviation=control, leaves=leaves
        )
        evaluate_backward(model, tree, cc, run)
        deviation_gap = np.max(np.sum((run.x_avg - baseline.x_avg) ** 2, axis=-1), axis=-1)
        return name, cost_parts(model, tree, run)["total"][:, 0], float(deviation_gap.mean())

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(evaluate, candidates))

    best_name, best_costs, best_gap = min(results, key=lambda item: item[1].mean())
    baseline_mean = float(baseline_costs.mean())
    differences = baseline_costs - best_costs
    se = float(differences.std(ddof=1) / np.sqrt(replications)) if replications > 1 else 0.0
    epsilon = max(0.0, float(differences.mean()))

    logger.info("N=%d ε̂=%.3e (se %.1e) best=%s", N, epsilon, se, best_name)
    return NashRow(
        N=N,
        replications=replications,
        baseline_cost=baseline_mean,
        best_candidate=best_name,
        best_candidate_cost=float(best_costs.mean()),
        epsilon=epsilon,
        epsilon_se=se,
        noise_floor=3.0 * se,
        deviation_gap_x=best_gap,
        candidate_count=len(candidates),
    )
