import logging

import numpy as np
from pydantic import BaseModel

from population.backward import evaluate_backward
from solver.scheme import TreeScheme

logger = logging.getLogger(__name__)


class CostBreakdown(BaseModel):
    """Realized cost of one agent, averaged over replications."""

    tracking_x: float
    tracking_y: float
    control_effort: float
    terminal: float
    total: float
    replication_totals: list[float]

    @property
    def standard_error(self):
        totals = np.asarray(self.replication_totals)
        if len(totals) < 2:
            return 0.0
        return float(totals.std(ddof=1) / np.sqrt(len(totals)))


def _quadratic(values, W):
    return np.einsum("...i,ij,...j->...", values, W, values)


def cost_parts(model, tree, run):
    """
    Left-endpoint quadrature of every agent's cost, per replication.
    Returns a dict of (R, N) arrays; y must already be evaluated.
    """
    scheme = TreeScheme(model, tree)
    n, dt = tree.depth, tree.dt
    R, N = run.replications, run.N
    tracking_x = np.zeros((R, N))
    tracking_y = np.zeros((R, N))
    control_effort = np.zeros((R, N))
    for k in range(n):
        s = scheme.slices[k]
        tracking_x += 0.5 * dt * _quadratic(run.x[:, :, k] - run.x_avg[:, None, k], s.Q)
        tracking_y += 0.5 * dt * _quadratic(run.y[:, :, k] - run.y_avg[:, None, k], s.L)
        control_effort += 0.5 * dt * _quadratic(run.u[:, :, k], s.R)
    terminal = 0.5 * _quadratic(run.x[:, :, n] - run.x_avg[:, None, n], model.G)
    return {
        "tracking_x": tracking_x,
        "tracking_y": tracking_y,
        "control_effort": control_effort,
        "terminal": terminal,
        "total": tracking_x + tracking_y + control_effort + terminal,
    }


def realized_cost(model, tree, cc, run, agent):
    """Cost of `agent` under its simulated control path, averaged over replications."""
    if run.y is None:
        evaluate_backward(model, tree, cc, run)
    parts = cost_parts(model, tree, run)
    values = {key: parts[key][:, agent] for key in parts}
    return CostBreakdown(
        tracking_x=float(values["tracking_x"].mean()),
        tracking_y=float(values["tracking_y"].mean()),
        control_effort=float(values["control_effort"].mean()),
        terminal=float(values["terminal"].mean()),
        total=float(values["total"].mean()),
        replication_totals=values["total"].tolist(),
    )


def agent_cost_rows(model, tree, cc, run):
    """One row per agent: mean cost parts and the realized y₀ discrepancy."""
    if run.y is None:
        evaluate_backward(model, tree, cc, run)
    parts = cost_parts(model, tree, run)
    y0_gap = (run.y[:, :, 0] - run.y_avg[:, None, 0]).mean(axis=0)
    rows = []
    for i in range(run.N):
        row = {"agent": int(run.agent_ids[i])}
        row.update({key: float(parts[key][:, i].mean()) for key in parts})
        row.update({f"y0_gap_{j}": float(v) for j, v in enumerate(y0_gap[i])})
        rows.append(row)
    return rows
