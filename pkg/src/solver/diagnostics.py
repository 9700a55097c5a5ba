"""
Checks on solved systems: local maximum principle, Hamiltonian, limiting
cost, consistency and terminal residuals.
"""

import logging

import numpy as np

from control.convex_set import sample_boundary_and_interior
from solver.scheme import TreeScheme
from tree.noise_tree import level_mean, level_means

logger = logging.getLogger(__name__)


def _quadratic(values, W):
    """⟨W v, v⟩ row-wise."""
    return np.einsum("ni,ij,nj->n", values, W, values)


def check_max_principle(model, tree, sol, samples=50, seed=0):
    """
    max over nodes and sampled u ∈ U of ⟨Bᵀq + Kᵀp + Dᵀk − Rū, u − ū⟩.
    Non-positive up to solver tolerance when ū is optimal.
    """
    scheme = TreeScheme(model, tree)
    worst = -np.inf
    for k in range(tree.depth):
        s = scheme.slices[k]
        u_bar = sol.u.at(k)
        residual = scheme.gradient(k, sol.p.at(k), sol.q.at(k), sol.kk.at(k)) - u_bar @ s.R.T
        candidates = sample_boundary_and_interior(model.control_set, samples, seed + k)
        # ⟨r, u − ū⟩ for every (node, sample) pair
        values = residual @ candidates.T - np.sum(residual * u_bar, axis=1, keepdims=True)
        worst = max(worst, float(values.max()))
    logger.debug("Max-principle violation %.3e", worst)
    return worst


def stationarity_gap(model, tree, sol):
    """max |Bᵀq + Kᵀp + Dᵀk − Rū| over nodes; zero for unconstrained optima."""
    scheme = TreeScheme(model, tree)
    gaps = [
        np.abs(scheme.gradient(k, sol.p.at(k), sol.q.at(k), sol.kk.at(k)) - sol.u.at(k) @ scheme.slices[k].R.T).max()
        for k in range(tree.depth)
    ]
    return float(max(gaps))


def hamiltonian(model, tree, sol, control=None):
    """
    H(t_k, x, y, u, p, q, k) per node for k = 0..n−1, with the means of `sol`:

        ⟨q, Ax + Bu + F m + b⟩ + ⟨k, Du + σ⟩ + ⟨p, Uy + Mx + Hm + V my + Ku + f⟩
        − ½(⟨Q(x − m), x − m⟩ + ⟨L(y − my), y − my⟩ + ⟨Ru, u⟩)

    `control` replaces ū (levels 0..n−1); it may carry an extra leading
    axis of candidate controls per node. Returns a list of arrays by level.
    """
    scheme = TreeScheme(model, tree)
    values = []
    for k in range(tree.depth):
        s = scheme.slices[k]
        x, y = sol.x.at(k), sol.y.at(k)
        p, q, kk = sol.p.at(k), sol.q.at(k), sol.kk.at(k)
        m, my = sol.m_x[k], sol.m_y[k]
        u = sol.u.at(k) if control is None else control[k]

        drift = x @ s.A.T + u @ s.B.T + m @ s.F.T + s.b
        diffusion = u @ s.D.T + s.sigma
        driver = y @ s.U_coef.T + x @ s.M.T + m @ s.H.T + my @ s.V.T + u @ s.K.T + s.f
        running = (
            np.sum(((x - m) @ s.Q) * (x - m), axis=-1)
            + np.sum(((y - my) @ s.L) * (y - my), axis=-1)
            + np.sum((u @ s.R) * u, axis=-1)
        )
        values.append(
            np.sum(q * drift, axis=-1) + np.sum(kk * diffusion, axis=-1) + np.sum(p * driver, axis=-1)
            - 0.5 * running
        )
    return values


def limiting_cost(model, tree, x, y, control, m_x, m_y):
    """
    Tree quadrature of the auxiliary cost (left-endpoint rule):
    ½ Σ_k Δt E[⟨Q(x−m_x),·⟩ + ⟨L(y−m_y),·⟩ + ⟨Ru,u⟩] + ½ E⟨G(x_T−m_x(T)),·⟩.
    """
    scheme = TreeScheme(model, tree)
    m_x = np.asarray(m_x, dtype=float).reshape(tree.depth + 1, model.n)
    m_y = np.asarray(m_y, dtype=float).reshape(tree.depth + 1, model.n)
    total = 0.0
    for k in range(tree.depth):
        s = scheme.slices[k]
        running = (
            _quadratic(x.at(k) - m_x[k], s.Q)
            + _quadratic(y.at(k) - m_y[k], s.L)
            + _quadratic(control.at(k), s.R)
        )
        total += 0.5 * tree.dt * float(level_mean(running[:, None])[0])
    terminal = _quadratic(x.at(tree.depth) - m_x[tree.depth], model.G)
    total += 0.5 * float(level_mean(terminal[:, None])[0])
    return total


def solution_cost(model, tree, sol):
    return limiting_cost(model, tree, sol.x, sol.y, sol.u, sol.m_x, sol.m_y)


def fixed_point_residual(tree, sol):
    """max over levels of ‖m_x − E x‖∞ + ‖m_y − E y‖∞."""
    gap_x = np.abs(sol.m_x - level_means(tree, sol.x)).max(axis=1)
    gap_y = np.abs(sol.m_y - level_means(tree, sol.y)).max(axis=1)
    return float((gap_x + gap_y).max())


def terminal_residuals(model, tree, sol):
    x_n, p_n = sol.x.at(tree.depth), sol.p.at(tree.depth)
    y_gap = sol.y.at(tree.depth) - x_n @ model.Phi.T
    q_gap = sol.q.at(tree.depth) - (p_n @ model.Phi - (x_n - sol.m_x[tree.depth]) @ model.G.T)
    return {"y_terminal": float(np.abs(y_gap).max()), "q_terminal": float(np.abs(q_gap).max())}


def adjoint_means(tree, sol):
    """max over levels of |E p| and |E q|."""
    return {
        "p": float(np.abs(level_means(tree, sol.p)).max()),
        "q": float(np.abs(level_means(tree, sol.q)).max()),
    }


def summarize(model, tree, sol, samples=50, seed=0):
    """Diagnostics JSON payload for a solved system."""
    payload = sol.diagnostics()
    payload.update(
        fixed_point_residual=fixed_point_residual(tree, sol),
        terminal=terminal_residuals(model, tree, sol),
        adjoint_means=adjoint_means(tree, sol),
        max_principle_violation=check_max_principle(model, tree, sol, samples=samples, seed=seed),
        limiting_cost=solution_cost(model, tree, sol),
    )
    return payload
