"""
Consistency-condition solver.

Picard iteration on the adjoints (p, q, k): every sweep evaluates the control
from the current adjoints, integrates the states forward and backward, and
recomputes the adjoints. The damping factor is halved (down to 1/64) whenever
the residual grows. In continuation mode the system is embedded in the
α-family, α = j / continuation_steps, each step warm-started from the last.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from common.errors import ModelValidationError, SolverDivergedError
from model.validation import MAX_CONDITION, condition_number_R, validate
from solver.options import DAMPING_FLOOR, SolveOptions
from solver.scheme import TreeScheme, check_grid_alignment
from tree.noise_tree import TreeProcess

logger = logging.getLogger(__name__)

BLOW_UP = 1e12
FINISH_SWEEPS = 100
FINISH_PATIENCE = 5


@dataclass
class CCSolution:
    x: TreeProcess
    y: TreeProcess
    z: TreeProcess
    p: TreeProcess
    q: TreeProcess
    kk: TreeProcess
    u: TreeProcess
    m_x: np.ndarray
    m_y: np.ndarray
    converged: bool
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    alpha_path: list = field(default_factory=list)
    damping: float = 1.0
    frozen_means: bool = False

    @property
    def final_residual(self):
        return self.residual_history[-1] if self.residual_history else 0.0

    def diagnostics(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "residual_history": list(self.residual_history),
            "alpha_path": list(self.alpha_path),
            "damping": self.damping,
            "frozen_means": self.frozen_means,
        }


class _PicardFailure(Exception):
    def __init__(self, reason, history):
        super().__init__(reason)
        self.history = history


def _sup_change(new, old):
    return max(float(np.max(np.abs(a - b))) for a, b in zip(new, old))


def _blend(theta, new, old):
    return [theta * a + (1.0 - theta) * b for a, b in zip(new, old)]


def _to_solution(model, sweep, u, adjoints, **diagnostics):
    p, q, kk = adjoints
    return CCSolution(
        x=TreeProcess(model.n, sweep.x),
        y=TreeProcess(model.n, sweep.y),
        z=TreeProcess(model.n, sweep.z),
        p=TreeProcess(model.n, p),
        q=TreeProcess(model.n, q),
        kk=TreeProcess(model.n, kk),
        u=TreeProcess(model.m, u),
        m_x=sweep.m_x,
        m_y=sweep.m_y,
        **diagnostics,
    )


def check_solvable(model, tree, opts):
    """Refuse models the solver cannot handle reliably."""
    report = validate(model, "strict")
    if not report.strict_pass:
        permissive = validate(model, "permissive")
        if not permissive.strict_pass:
            details = "; ".join(f"{v.field}: {v.detail}" for v in permissive.violations)
            raise ModelValidationError(f"Model fails validation: {details}")
        if not opts.allow_permissive:
            details = "; ".join(f"{v.field}: {v.detail}" for v in report.violations)
            raise ModelValidationError(f"Model is only permissive-valid ({details}); set allow_permissive to solve it")
        logger.warning("Solving a permissive-only model (%d strict violation(s))", len(report.violations))
    condition = condition_number_R(model)
    if condition > MAX_CONDITION:
        raise ModelValidationError(f"R is ill-conditioned (cond={condition:.3e} > {MAX_CONDITION:.0e})")
    check_grid_alignment(model, tree)


def _picard(scheme, adjoints, opts, m_frozen=None, my_frozen=None, label="α=1"):
    """
    Iterate to a fixed point from `adjoints`. Returns (sweep, adjoints, history, theta).
    Raises _PicardFailure on blow-up or when max_iters is exhausted.
    """
    theta = opts.damping
    history = []
    previous_means = None
    previous_residual = np.inf

    for iteration in range(1, opts.max_iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            sweep = scheme.sweep(*adjoints, m_frozen=m_frozen, my_frozen=my_frozen)
            new = (sweep.p, sweep.q, sweep.kk)
            residual = sum(_sup_change(a, b) for a, b in zip(new, adjoints))
            if previous_means is not None:
                residual += float(np.max(np.abs(sweep.m_x - previous_means[0])))
                residual += float(np.max(np.abs(sweep.m_y - previous_means[1])))
            else:
                residual += float(np.max(np.abs(sweep.m_x))) + float(np.max(np.abs(sweep.m_y)))

        history.append(residual)
        logger.debug("[%s] iteration %d residual %.3e theta %.4g", label, iteration, residual, theta)

        if not np.isfinite(residual) or residual > BLOW_UP:
            if opts.adaptive_damping and theta > DAMPING_FLOOR:
                theta = max(theta / 2.0, DAMPING_FLOOR)
                logger.warning("[%s] residual blew up at iteration %d; damping halved to %.4g", label, iteration, theta)
                previous_means = None
                previous_residual = np.inf
                continue
            raise _PicardFailure(f"residual blew up at iteration {iteration}", history)

        if residual < opts.picard_tol:
            return sweep, adjoints, history, theta

        if opts.adaptive_damping and residual > previous_residual and theta > DAMPING_FLOOR:
            theta = max(theta / 2.0, DAMPING_FLOOR)
            logger.warning("[%s] residual increased at iteration %d; damping halved to %.4g", label, iteration, theta)

        adjoints = tuple(_blend(theta, a, b) for a, b in zip(new, adjoints))
        previous_means = (sweep.m_x, sweep.m_y)
        previous_residual = residual

    raise _PicardFailure(f"no convergence in {opts.max_iters} iterations", history)


def _finish(scheme, adjoints, m_frozen=None, my_frozen=None):
    """
    Undamped assembly sweeps on the control. Returns the sweep whose control
    is closest to φ of its own adjoints; its states, means and adjoints are
    the ones that control generates, so the terminal rows hold exactly.
    """
    sweep = scheme.respond(scheme.controls(*adjoints), m_frozen, my_frozen)
    best, best_change = sweep, np.inf
    stalled = 0
    for _ in range(FINISH_SWEEPS):
        with np.errstate(over="ignore", invalid="ignore"):
            u_next = scheme.controls(sweep.p, sweep.q, sweep.kk)
            change = _sup_change(u_next, sweep.u)
        if change < best_change:
            best, best_change, stalled = sweep, change, 0
        else:
            stalled += 1
        if change == 0.0 or stalled >= FINISH_PATIENCE or not np.isfinite(change):
            break
        sweep = scheme.respond(u_next, m_frozen, my_frozen)
    logger.debug("Assembly sweeps done: control change %.3e", best_change)
    return best


def _continuation(model, tree, opts, m_frozen=None, my_frozen=None):
    steps = opts.continuation_steps
    zero = TreeScheme(model, tree, alpha=0.0)
    adjoints = zero.zero_adjoints()
    history = []
    alpha_path = [0.0]
    theta = opts.damping
    scheme = zero
    for j in range(1, steps + 1):
        alpha = j / steps
        scheme = TreeScheme(model, tree, alpha=alpha)
        try:
            _, adjoints, step_history, theta = _picard(
                scheme, adjoints, opts, m_frozen, my_frozen, label=f"α={alpha:.3g}"
            )
        except _PicardFailure as failure:
            history.extend(failure.history)
            alpha_path.append(alpha)
            raise SolverDivergedError(
                f"Continuation failed at α={alpha:.3g}: {failure}", history, alpha_path
            ) from failure
        history.extend(step_history)
        alpha_path.append(alpha)
        logger.info("Continuation step α=%.3g converged in %d iterations", alpha, len(step_history))
    return scheme, adjoints, history, alpha_path, theta


def _solve(model, tree, opts, m_frozen=None, my_frozen=None):
    scheme = TreeScheme(model, tree, alpha=1.0)
    history = []
    alpha_path = []

    if opts.mode in ("auto", "picard_only"):
        try:
            _, adjoints, history, theta = _picard(scheme, scheme.zero_adjoints(), opts, m_frozen, my_frozen)
            alpha_path = [1.0]
        except _PicardFailure as failure:
            history = failure.history
            if opts.mode == "picard_only":
                raise SolverDivergedError(f"Picard iteration failed: {failure}", history, [1.0]) from failure
            logger.warning("Picard iteration failed (%s); falling back to continuation", failure)
            scheme, adjoints, more, alpha_path, theta = _continuation(model, tree, opts, m_frozen, my_frozen)
            history = history + more
    else:
        scheme, adjoints, history, alpha_path, theta = _continuation(model, tree, opts, m_frozen, my_frozen)

    sweep = _finish(scheme, adjoints, m_frozen, my_frozen)
    return _to_solution(
        model, sweep, sweep.u, (sweep.p, sweep.q, sweep.kk),
        converged=True,
        iterations=len(history),
        residual_history=history,
        alpha_path=alpha_path,
        damping=theta,
        frozen_means=m_frozen is not None,
    )


def solve_cc(model, tree, opts=None):
    """Solve the consistency system; the means are part of the fixed point."""
    opts = opts or SolveOptions()
    check_solvable(model, tree, opts)
    solution = _solve(model, tree, opts)
    logger.info(
        "Consistency system solved: %d iterations, residual %.3e, α-path %s",
        solution.iterations, solution.final_residual, solution.alpha_path,
    )
    return solution


def _mean_path(values, tree, model, name):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1 and model.n == 1:
        values = values[:, None]
    if values.shape != (tree.depth + 1, model.n):
        raise ValueError(f"{name} must have shape ({tree.depth + 1}, {model.n}), got {values.shape}")
    return values


def solve_auxiliary(model, tree, m_x, m_y, opts=None):
    """Optimal control of the auxiliary problem against frozen mean paths."""
    opts = opts or SolveOptions()
    check_solvable(model, tree, opts)
    m_x = _mean_path(m_x, tree, model, "m_x")
    m_y = _mean_path(m_y, tree, model, "m_y")
    solution = _solve(model, tree, opts, m_frozen=m_x, my_frozen=m_y)
    logger.debug("Auxiliary problem solved in %d iterations", solution.iterations)
    return solution


def respond_to_control(model, tree, control, m_x, m_y):
    """
    States and adjoints of the auxiliary problem under an arbitrary tree
    control (levels 0..n−1) with frozen means.
    """
    check_grid_alignment(model, tree)
    m_x = _mean_path(m_x, tree, model, "m_x")
    m_y = _mean_path(m_y, tree, model, "m_y")
    u = control.values if isinstance(control, TreeProcess) else list(control)
    if len(u) != tree.depth:
        raise ValueError(f"Control must cover levels 0..{tree.depth - 1}")
    scheme = TreeScheme(model, tree, alpha=1.0)
    sweep = scheme.respond(u, m_frozen=m_x, my_frozen=m_y)
    return _to_solution(
        model, sweep, u, (sweep.p, sweep.q, sweep.kk),
        converged=True,
        frozen_means=True,
    )
