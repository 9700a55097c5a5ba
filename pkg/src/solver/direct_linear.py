"""
Direct linear-system oracle for the unconstrained consistency system.

When U = R^m the control is linear in the adjoints, so the whole discrete
system (dynamics rows, martingale-representation rows, terminal rows and
mean-coupling rows) is one sparse linear system in the node unknowns
x, y, p, q (levels 0..n), z, k (levels 0..n−1) and the level means m_x, m_y.
"""

import logging

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from common.errors import LabError, UnsupportedError
from solver.cc_solver import CCSolution, check_solvable
from solver.options import SolveOptions
from solver.scheme import TreeScheme
from tree.noise_tree import TreeProcess

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


class _Layout:
    """Column offsets of every n-block unknown."""

    def __init__(self, depth, d):
        self.depth = depth
        self.d = d
        self.offsets = {}
        cursor = 0
        for name, last in (("x", depth), ("y", depth), ("p", depth), ("q", depth), ("z", depth - 1), ("kk", depth - 1)):
            for k in range(last + 1):
                self.offsets[name, k] = cursor
                cursor += 2 ** k * d
        for name in ("mx", "my"):
            self.offsets[name] = cursor
            cursor += (depth + 1) * d
        self.size = cursor

    def node(self, name, k, j):
        return self.offsets[name, k] + j * self.d

    def mean(self, name, k):
        return self.offsets[name] + k * self.d


class _Assembler:
    def __init__(self, size):
        self.rows, self.cols, self.vals = [], [], []
        self.rhs = np.zeros(size)

    def block(self, row, col, matrix):
        matrix = np.atleast_2d(matrix)
        r, c = np.nonzero(matrix)
        self.rows.extend(row + r)
        self.cols.extend(col + c)
        self.vals.extend(matrix[r, c])

    def set_rhs(self, row, vector):
        self.rhs[row:row + len(vector)] += vector

    def matrix(self, size):
        return sparse.csc_matrix((self.vals, (self.rows, self.cols)), shape=(size, size))


def _add_control(asm, layout, row, k, j, W, s, R_inv):
    """Adds W u_k(j) with u = R⁻¹(Bᵀq + Kᵀp + Dᵀk) substituted."""
    gain = W @ R_inv
    asm.block(row, layout.node("q", k, j), gain @ s.B.T)
    asm.block(row, layout.node("p", k, j), gain @ s.K.T)
    asm.block(row, layout.node("kk", k, j), gain @ s.D.T)


def _add_lambda(asm, layout, row, k, j, scale, model, scheme):
    """Adds scale·λ_k(j) expressed through q, p, x and m_x at level k."""
    n, dt = layout.depth, scheme.tree.dt
    eye = np.eye(layout.d)
    if k == n:
        asm.block(row, layout.node("q", k, j), scale * eye)
        return
    s = scheme.slices[k]
    asm.block(row, layout.node("q", k, j), scale * (eye + s.A.T * dt))
    asm.block(row, layout.node("p", k, j), scale * s.M.T * dt)
    asm.block(row, layout.node("x", k, j), -scale * s.Q * dt)
    asm.block(row, layout.mean("mx", k), scale * s.Q * dt)


def solve_cc_direct_linear(model, tree, opts=None):
    """Solve the unconstrained consistency system in one sparse factorisation."""
    if model.control_set.kind != "whole":
        raise UnsupportedError(f"The linear oracle needs an unconstrained control set, got {model.control_set.kind!r}")
    opts = opts or SolveOptions()
    check_solvable(model, tree, opts)

    scheme = TreeScheme(model, tree, alpha=1.0)
    n, d, dt, sqdt = tree.depth, model.n, tree.dt, tree.sqrt_dt
    eye = np.eye(d)
    layout = _Layout(n, d)
    asm = _Assembler(layout.size)
    row = 0

    # x rows
    asm.block(row, layout.node("x", 0, 0), eye)
    asm.set_rhs(row, model.x0)
    row += d
    for k in range(n):
        s = scheme.slices[k]
        for j in range(2 ** k):
            for child, sign in ((2 * j, 1.0), (2 * j + 1, -1.0)):
                dw = sign * sqdt
                asm.block(row, layout.node("x", k + 1, child), eye)
                asm.block(row, layout.node("x", k, j), -(eye + s.A * dt))
                asm.block(row, layout.mean("mx", k), -s.F * dt)
                _add_control(asm, layout, row, k, j, -(s.B * dt + s.D * dw), s, scheme.R_inv[k])
                asm.set_rhs(row, s.b * dt + s.sigma * dw)
                row += d

    # mean rows
    for name, proc in (("mx", "x"), ("my", "y")):
        for k in range(n + 1):
            asm.block(row, layout.mean(name, k), eye)
            weight = 2.0 ** -k
            for j in range(2 ** k):
                asm.block(row, layout.node(proc, k, j), -weight * eye)
            row += d

    # y and z rows
    for j in range(2 ** n):
        asm.block(row, layout.node("y", n, j), eye)
        asm.block(row, layout.node("x", n, j), -model.Phi)
        row += d
    for k in range(n):
        s = scheme.slices[k]
        for j in range(2 ** k):
            up, down = layout.node("y", k + 1, 2 * j), layout.node("y", k + 1, 2 * j + 1)
            asm.block(row, layout.node("y", k, j), eye - s.U_coef * dt)
            asm.block(row, up, -0.5 * eye)
            asm.block(row, down, -0.5 * eye)
            asm.block(row, layout.node("x", k, j), -s.M * dt)
            asm.block(row, layout.mean("mx", k), -s.H * dt)
            asm.block(row, layout.mean("my", k), -s.V * dt)
            _add_control(asm, layout, row, k, j, -s.K * dt, s, scheme.R_inv[k])
            asm.set_rhs(row, s.f * dt)
            row += d

            asm.block(row, layout.node("z", k, j), eye)
            asm.block(row, up, -eye / (2.0 * sqdt))
            asm.block(row, down, eye / (2.0 * sqdt))
            row += d

    # p rows
    for k in range(n):
        s = scheme.slices[k]
        for j in range(2 ** k):
            asm.block(row, layout.node("p", k, j), eye - s.U_coef.T * dt)
            if k > 0:
                asm.block(row, layout.node("p", k - 1, j // 2), -eye)
            asm.block(row, layout.node("y", k, j), s.L * dt)
            asm.block(row, layout.mean("my", k), -s.L * dt)
            row += d
    for j in range(2 ** n):
        asm.block(row, layout.node("p", n, j), eye)
        asm.block(row, layout.node("p", n - 1, j // 2), -eye)
        row += d

    # q and k rows
    for j in range(2 ** n):
        asm.block(row, layout.node("q", n, j), eye)
        asm.block(row, layout.node("p", n, j), -model.Phi.T)
        asm.block(row, layout.node("x", n, j), model.G)
        asm.block(row, layout.mean("mx", n), -model.G)
        row += d
    for k in range(n):
        for j in range(2 ** k):
            asm.block(row, layout.node("q", k, j), eye)
            _add_lambda(asm, layout, row, k + 1, 2 * j, -0.5, model, scheme)
            _add_lambda(asm, layout, row, k + 1, 2 * j + 1, -0.5, model, scheme)
            row += d

            asm.block(row, layout.node("kk", k, j), eye)
            _add_lambda(asm, layout, row, k + 1, 2 * j, -1.0 / (2.0 * sqdt), model, scheme)
            _add_lambda(asm, layout, row, k + 1, 2 * j + 1, 1.0 / (2.0 * sqdt), model, scheme)
            row += d

    if row != layout.size:
        raise LabError(f"Oracle assembled {row} equations for {layout.size} unknowns")

    matrix = asm.matrix(layout.size)
    solution = spsolve(matrix, asm.rhs)
    if not np.all(np.isfinite(solution)):
        raise LabError("Oracle system is singular")
    residual = float(np.max(np.abs(matrix @ solution - asm.rhs)))
    if residual > RESIDUAL_TOL:
        logger.warning("Oracle residual %.3e exceeds %.0e", residual, RESIDUAL_TOL)
    logger.info("Direct linear oracle: %d unknowns, residual %.3e", layout.size, residual)

    def levels(name, last):
        return [solution[layout.offsets[name, k]:layout.offsets[name, k] + 2 ** k * d].reshape(2 ** k, d)
                for k in range(last + 1)]

    p, q, kk = levels("p", n), levels("q", n), levels("kk", n - 1)
    return CCSolution(
        x=TreeProcess(d, levels("x", n)),
        y=TreeProcess(d, levels("y", n)),
        z=TreeProcess(d, levels("z", n - 1)),
        p=TreeProcess(d, p),
        q=TreeProcess(d, q),
        kk=TreeProcess(d, kk),
        u=TreeProcess(model.m, scheme.controls(p, q, kk)),
        m_x=solution[layout.offsets["mx"]:layout.offsets["mx"] + (n + 1) * d].reshape(n + 1, d),
        m_y=solution[layout.offsets["my"]:layout.offsets["my"] + (n + 1) * d].reshape(n + 1, d),
        converged=True,
        iterations=1,
        residual_history=[residual],
        alpha_path=[1.0],
    )
