"""
One sweep of the discretised consistency system on the scenario tree.

Levels k = 0..n with coefficients frozen at t_k. Row-vector convention:
level arrays have shape (2^k, d), so A x is written x @ A.T.

    x_{k+1} = x_k + α(A x_k + B u_k + F m_k + b)Δt + α(D u_k + σ)ΔW
    (I − αUΔt) y_k = E_k y_{k+1} + α(M x_k + H m_k + V my_k + K u_k + f)Δt,   y_n = αΦ x_n
    (I − αUᵀΔt) p_k = p_{k−1} − αL(y_k − my_k)Δt,   p_{−1} = 0,   p_n = p_{n−1}
    λ_n = α(Φᵀp_n − G(x_n − m_n))
    λ_k = (I + αAᵀΔt) q_k + α(Mᵀp_k − Q(x_k − m_k))Δt
    (q_k, k_k) = martingale representation of λ_{k+1},   q_n = λ_n
    u_k = P_U^R[R⁻¹(Bᵀq_k + Kᵀp_k + Dᵀk_k)]

With frozen means these are the exact optimality conditions of the
left-endpoint discretisation of the auxiliary cost.
"""

import logging
from dataclasses import dataclass

import numpy as np

from common.errors import ModelValidationError, TreeError
from control.convex_set import project, project_many
from model.spec import coeff_at_step
from tree.noise_tree import level_mean, split_level

logger = logging.getLogger(__name__)

MESH_ALIGNMENT_TOL = 1e-9


def phi(R, B, K, D, cset, p, q, k):
    """Projected control map φ(p, q, k) = P_U^R[R⁻¹(Bᵀq + Kᵀp + Dᵀk)] at one node."""
    R = np.asarray(R, dtype=float)
    gradient = (np.asarray(B, dtype=float).T @ np.asarray(q, dtype=float)
                + np.asarray(K, dtype=float).T @ np.asarray(p, dtype=float)
                + np.asarray(D, dtype=float).T @ np.asarray(k, dtype=float))
    try:
        target = np.linalg.solve(R, gradient)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"R is singular: {e}") from e
    return project(cset, R, target).point


def euler_step(s, x, u, m, dw, dt, alpha=1.0):
    """x + α(Ax + Bu + Fm + b)Δt + α(Du + σ)ΔW for row-stacked states; shared by tree and population."""
    drift = x @ s.A.T + u @ s.B.T + m @ s.F.T + s.b
    diffusion = u @ s.D.T + s.sigma
    return x + alpha * drift * dt + alpha * diffusion * dw


def check_grid_alignment(model, tree):
    """Every coefficient breakpoint must be a tree time, so coefficients are constant per step."""
    if not np.isclose(model.T, tree.T, rtol=0.0, atol=1e-12):
        raise TreeError(f"Tree horizon {tree.T} does not match model horizon {model.T}")
    steps = model.breakpoints() / tree.dt
    misaligned = np.abs(steps - np.round(steps)) > MESH_ALIGNMENT_TOL
    if np.any(misaligned):
        raise ModelValidationError(
            f"Coefficient mesh points {model.breakpoints()[misaligned].tolist()} "
            f"are not on the tree grid (dt={tree.dt})"
        )


@dataclass
class Sweep:
    """Result of one pass: control, states, means and the new adjoints (lists by level)."""

    u: list
    x: list
    y: list
    z: list
    m_x: np.ndarray
    m_y: np.ndarray
    p: list
    q: list
    kk: list


class TreeScheme:
    """Level operators of the α-scaled system for one model on one tree."""

    def __init__(self, model, tree, alpha=1.0):
        self.model = model
        self.tree = tree
        self.alpha = float(alpha)
        n_levels = tree.depth + 1
        dt = tree.dt
        a = self.alpha
        eye = np.eye(model.n)

        self.slices = [coeff_at_step(model, k, dt) for k in range(n_levels)]
        self.R_inv = [np.linalg.inv(s.R) for s in self.slices]
        self.y_solve = [np.linalg.inv(eye - a * s.U_coef * dt) for s in self.slices]
        self.my_solve = [np.linalg.inv(eye - a * (s.U_coef + s.V) * dt) for s in self.slices]
        self.p_solve = [np.linalg.inv(eye - a * s.U_coef.T * dt) for s in self.slices]

    # ─── Control ───

    def gradient(self, k, p, q, kk):
        """Bᵀq + Kᵀp + Dᵀk at every node of level k."""
        s = self.slices[k]
        return q @ s.B + p @ s.K + kk @ s.D

    def controls(self, p, q, kk):
        """u_k = φ_k(p_k, q_k, k_k) for k = 0..n−1."""
        controls = []
        for k in range(self.tree.depth):
            target = self.gradient(k, p[k], q[k], kk[k]) @ self.R_inv[k].T
            points, _, _ = project_many(self.model.control_set, self.slices[k].R, target)
            controls.append(points)
        return controls

    # ─── Sweeps ───

    def forward_state(self, u, m_frozen=None):
        """Explicit Euler on the tree. Means are E x_k unless frozen."""
        tree, a, dt = self.tree, self.alpha, self.tree.dt
        x = [self.model.x0[None, :].copy()]
        means = []
        for k in range(tree.depth):
            s = self.slices[k]
            m_k = level_mean(x[k]) if m_frozen is None else m_frozen[k]
            means.append(m_k)
            dw = tree.increments(k + 1)[:, None]
            x.append(euler_step(s, np.repeat(x[k], 2, axis=0), np.repeat(u[k], 2, axis=0), m_k, dw, dt, a))
        means.append(level_mean(x[-1]) if m_frozen is None else m_frozen[tree.depth])
        return x, np.array(means)

    def backward_state(self, x, u, m_x, my_frozen=None):
        """Implicit backward step for y with z from the martingale representation."""
        tree, a, dt, n = self.tree, self.alpha, self.tree.dt, self.tree.depth
        y = [None] * (n + 1)
        z = [None] * n
        my = np.zeros((n + 1, self.model.n)) if my_frozen is None else np.array(my_frozen, dtype=float)

        y[n] = a * x[n] @ self.model.Phi.T
        if my_frozen is None:
            my[n] = level_mean(y[n])
        for k in range(n - 1, -1, -1):
            s = self.slices[k]
            conditional, z[k] = split_level(tree, y[k + 1])
            if my_frozen is None:
                mean_rhs = level_mean(y[k + 1]) + a * (
                    (s.M + s.H) @ m_x[k] + s.K @ level_mean(u[k]) + s.f
                ) * dt
                my[k] = self.my_solve[k] @ mean_rhs
            driver = x[k] @ s.M.T + m_x[k] @ s.H.T + my[k] @ s.V.T + u[k] @ s.K.T + s.f
            y[k] = (conditional + a * driver * dt) @ self.y_solve[k].T
        return y, z, my

    def forward_adjoint(self, y, m_y):
        n, a, dt = self.tree.depth, self.alpha, self.tree.dt
        p = []
        previous = np.zeros((1, self.model.n))
        for k in range(n):
            parent = previous if k == 0 else np.repeat(previous, 2, axis=0)
            s = self.slices[k]
            rhs = parent - a * (y[k] - m_y[k]) @ s.L.T * dt
            previous = rhs @ self.p_solve[k].T
            p.append(previous)
        p.append(np.repeat(previous, 2, axis=0))
        return p

    def terminal_adjoint(self, x_n, m_n, p_n):
        return self.alpha * (p_n @ self.model.Phi - (x_n - m_n) @ self.model.G.T)

    def backward_adjoint(self, x, m_x, p):
        n, a, dt = self.tree.depth, self.alpha, self.tree.dt
        q = [None] * (n + 1)
        kk = [None] * n
        lam = self.terminal_adjoint(x[n], m_x[n], p[n])
        q[n] = lam
        for k in range(n - 1, -1, -1):
            q[k], kk[k] = split_level(self.tree, lam)
            if k > 0:
                s = self.slices[k]
                lam = q[k] + a * (q[k] @ s.A + p[k] @ s.M - (x[k] - m_x[k]) @ s.Q.T) * dt
        return q, kk

    def respond(self, u, m_frozen=None, my_frozen=None):
        """States and adjoints generated by a given control."""
        x, m_x = self.forward_state(u, m_frozen)
        y, z, m_y = self.backward_state(x, u, m_x, my_frozen)
        p = self.forward_adjoint(y, m_y)
        q, kk = self.backward_adjoint(x, m_x, p)
        return Sweep(u=u, x=x, y=y, z=z, m_x=m_x, m_y=m_y, p=p, q=q, kk=kk)

    def sweep(self, p, q, kk, m_frozen=None, my_frozen=None):
        """One Picard pass from the current adjoints."""
        return self.respond(self.controls(p, q, kk), m_frozen, my_frozen)

    def zero_adjoints(self):
        n, d = self.tree.depth, self.model.n
        p = [np.zeros((2 ** k, d)) for k in range(n + 1)]
        q = [np.zeros((2 ** k, d)) for k in range(n + 1)]
        kk = [np.zeros((2 ** k, d)) for k in range(n)]
        return p, q, kk
