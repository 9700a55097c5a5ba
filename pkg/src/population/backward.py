"""
Backward components of the N-agent system in closed form.

With deterministic coefficients the aggregate and individual backward
equations are linear, so their value at level k is the backward recursion

    V_s = (I − (U+V)_sΔt)⁻¹ (V_{s+1} + ((M+H)_s E_k x̄_s + K_s E_k ū_s + f_s)Δt),   V_n = Φ E_k x̄_n
    W_s = (I − U_sΔt)⁻¹   (W_{s+1} + (M_s E_k xⁱ_s + H_s E_k x̄_s + V_s V_s + K_s E_k uⁱ_s + f_s)Δt),   W_n = Φ E_k xⁱ_n

run for s = n..k, with ȳ_k = V_k and yⁱ_k = W_k. The conditional means
E_k uⁱ_s split over agents (independent paths) and are read from exact tree
conditional-expectation tables; E_k x̄_s and E_k xⁱ_s follow from the mean
dynamics started at the realized values. No joint-filtration tree is built.
"""

import logging

import numpy as np

from common.errors import UnsupportedError
from population.simulate import agent_average
from solver.scheme import TreeScheme
from tree.noise_tree import conditional_expectation_table

logger = logging.getLogger(__name__)

MAX_BACKWARD_DIM = 2


def _control_tables(tree, cc, run):
    tables = {"strategy": conditional_expectation_table(tree, cc.u)}
    if run.deviation is not None:
        tables["deviation"] = conditional_expectation_table(tree, run.deviation)
    return tables


def _conditional_controls(tables, run, k, s):
    """E_k[uⁱ_s] for every replication and agent. Shape (R, N, m)."""
    values = tables["strategy"][s][k][run.nodes[..., k]]
    if "deviation" in tables:
        values[:, 0] = tables["deviation"][s][k][run.nodes[:, 0, k]]
    return values


def _backward(model, tree, cc, run, individual=True):
    if not cc.converged:
        raise UnsupportedError("Backward evaluation needs a converged solution")
    if model.n > MAX_BACKWARD_DIM or model.m > MAX_BACKWARD_DIM:
        raise UnsupportedError(f"Backward evaluation supports n, m <= {MAX_BACKWARD_DIM}")
    n, dt = tree.depth, tree.dt
    scheme = TreeScheme(model, tree)
    slices = scheme.slices
    eye = np.eye(model.n)
    aggregate_solve = [np.linalg.inv(eye - (s.U_coef + s.V) * dt) for s in slices]
    individual_solve = scheme.y_solve
    tables = _control_tables(tree, cc, run)

    R, N = run.replications, run.N
    y_avg = np.empty((R, n + 1, model.n))
    y = np.empty((R, N, n + 1, model.n)) if individual else None

    for k in range(n + 1):
        controls = {s: _conditional_controls(tables, run, k, s) for s in range(k, n)}
        control_avg = {s: agent_average(controls[s]) for s in range(k, n)}

        # conditional means of the aggregate and of each agent for s = k..n
        m = {k: run.x_avg[:, k]}
        e = {k: run.x[:, :, k]} if individual else None
        for s in range(k, n):
            c = slices[s]
            m[s + 1] = m[s] + (m[s] @ (c.A + c.F).T + control_avg[s] @ c.B.T + c.b) * dt
            if individual:
                e[s + 1] = e[s] + (e[s] @ c.A.T + controls[s] @ c.B.T + m[s][:, None] @ c.F.T + c.b) * dt

        V = {n: m[n] @ model.Phi.T}
        for s in range(n - 1, k - 1, -1):
            c = slices[s]
            driver = m[s] @ (c.M + c.H).T + control_avg[s] @ c.K.T + c.f
            V[s] = (V[s + 1] + driver * dt) @ aggregate_solve[s].T
        y_avg[:, k] = V[k]

        if individual:
            W = e[n] @ model.Phi.T
            for s in range(n - 1, k - 1, -1):
                c = slices[s]
                driver = (e[s] @ c.M.T + m[s][:, None] @ c.H.T + V[s][:, None] @ c.V.T
                          + controls[s] @ c.K.T + c.f)
                W = (W + driver * dt) @ individual_solve[s].T
            y[:, :, k] = W

    return y_avg, y


def evaluate_backward_aggregate(model, tree, cc, run):
    """ȳ^{(N)} at every level for every replication. Shape (R, n+1, d)."""
    y_avg, _ = _backward(model, tree, cc, run, individual=False)
    return y_avg


def evaluate_backward_individual(model, tree, cc, run, agent=None):
    """yⁱ along each agent's path; one agent (R, n+1, d) or all (R, N, n+1, d)."""
    _, y = _backward(model, tree, cc, run, individual=True)
    return y if agent is None else y[:, agent]


def evaluate_backward(model, tree, cc, run):
    """Fill run.y and run.y_avg in one pass."""
    run.y_avg, run.y = _backward(model, tree, cc, run, individual=True)
    return run
