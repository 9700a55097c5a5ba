"""
Closed convex control sets U ⊂ R^m and projections under the R-weighted
inner product <R(u - v), u - v>.

Every operation is batched: points are rows of an (N, m) array so the solver
can project all nodes of a tree level in one call.
"""

import logging
from dataclasses import dataclass

import numpy as np

from common.errors import ModelValidationError, ProjectionError

logger = logging.getLogger(__name__)

KINDS = ("whole", "box", "ball", "orthant")

PROJECTION_TOL = 1e-12
MAX_ITERATIONS = 100_000


@dataclass(frozen=True, eq=False)
class ConvexSet:
    kind: str
    dim: int
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelValidationError(f"Unknown control set kind: {self.kind!r}")
        if self.dim < 1:
            raise ModelValidationError("Control set dimension must be >= 1")
        if self.kind == "box":
            if self.lo.shape != (self.dim,) or self.hi.shape != (self.dim,):
                raise ModelValidationError(f"Box bounds must have shape ({self.dim},)")
            if np.any(self.lo > self.hi):
                raise ModelValidationError("Box requires lo <= hi componentwise")
        if self.kind == "ball":
            if self.center.shape != (self.dim,):
                raise ModelValidationError(f"Ball center must have shape ({self.dim},)")
            if not self.radius > 0:
                raise ModelValidationError("Ball radius must be positive")

    # Constructors
    @classmethod
    def whole(cls, m):
        return cls("whole", m)

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        return cls("box", lo.size, lo=lo, hi=hi)

    @classmethod
    def ball(cls, center, radius):
        center = np.asarray(center, dtype=float).ravel()
        return cls("ball", center.size, center=center, radius=float(radius))

    @classmethod
    def orthant(cls, m):
        return cls("orthant", m)

    @classmethod
    def from_dict(cls, data, m):
        """Decode the tagged-union JSON encoding used in model files."""
        kind = data.get("kind")
        if kind == "whole":
            return cls.whole(m)
        if kind == "orthant":
            return cls.orthant(m)
        if kind == "box":
            return cls.box(data["lo"], data["hi"])
        if kind == "ball":
            return cls.ball(data["center"], data["radius"])
        raise ModelValidationError(f"Unknown control set kind: {kind!r}")

    def to_dict(self):
        data = {"kind": self.kind}
        if self.kind == "box":
            data.update(lo=self.lo.tolist(), hi=self.hi.tolist())
        elif self.kind == "ball":
            data.update(center=self.center.tolist(), radius=self.radius)
        return data

    def euclidean_projection(self, points):
        """Nearest point of U in the Euclidean norm, row-wise."""
        points = np.asarray(points, dtype=float)
        if self.kind == "whole":
            return points.copy()
        if self.kind == "box":
            return np.clip(points, self.lo, self.hi)
        if self.kind == "orthant":
            return np.maximum(points, 0.0)
        offset = points - self.center
        norms = np.linalg.norm(offset, axis=-1, keepdims=True)
        scale = np.minimum(1.0, self.radius / np.maximum(norms, np.finfo(float).tiny))
        return self.center + offset * scale


@dataclass
class WeightedProjectionResult:
    point: np.ndarray
    iterations: int
    kkt_residual: float


def check_spd(R):
    """Raise ProjectionError unless R is symmetric positive definite. Returns eigenvalues."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ProjectionError(f"Weight matrix must be square, got shape {R.shape}")
    if not np.allclose(R, R.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(R).max())):
        raise ProjectionError("Weight matrix is not symmetric")
    eigenvalues = np.linalg.eigvalsh(R)
    if eigenvalues[0] <= 0.0:
        raise ProjectionError(f"Weight matrix is not positive definite (min eigenvalue {eigenvalues[0]:.3e})")
    return eigenvalues


def kkt_residual(cset, R, points, targets):
    """
    Natural residual ‖u − P_U(u − R(u − v))‖∞ per row; zero iff u is the
    weighted projection of v.
    """
    gradient = (points - targets) @ R
    return np.abs(points - cset.euclidean_projection(points - gradient)).max(axis=-1)


def project_many(cset, R, targets):
    """
    Weighted projection of every row of `targets` onto `cset`.

    Closed form for the whole space, componentwise clamp for box/orthant under
    a diagonal weight, radial scaling for a ball under a scalar weight.
    Otherwise an accelerated projected-gradient iteration with step 1/λ_max(R)
    and gradient restarts, stopped when the KKT residual drops below 1e-12.

    Returns (points, iterations, residuals).
    """
    R = np.asarray(R, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.shape[-1] != cset.dim:
        raise ProjectionError(f"Point dimension {targets.shape[-1]} does not match set dimension {cset.dim}")
    eigenvalues = check_spd(R)

    if cset.kind == "whole":
        return targets.copy(), 0, np.zeros(len(targets))

    off_diagonal = R - np.diag(np.diag(R))
    diagonal = not np.any(off_diagonal)
    if cset.kind in ("box", "orthant") and diagonal:
        points = cset.euclidean_projection(targets)
        return points, 0, kkt_residual(cset, R, points, targets)
    if cset.kind == "ball" and diagonal and np.all(np.diag(R) == R[0, 0]):
        points = cset.euclidean_projection(targets)
        return points, 0, kkt_residual(cset, R, points, targets)

    step = 1.0 / eigenvalues[-1]
    scale = np.maximum(1.0, np.abs(targets).max(axis=-1))
    points = cset.euclidean_projection(targets)
    momentum_point = points.copy()
    t = 1.0
    for iteration in range(1, MAX_ITERATIONS + 1):
        gradient = (momentum_point - targets) @ R
        new_points = cset.euclidean_projection(momentum_point - step * gradient)

        residuals = kkt_residual(cset, R, new_points, targets)
        if np.all(residuals < PROJECTION_TOL * scale):
            return new_points, iteration, residuals

        # restart momentum whenever it points uphill
        uphill = np.sum((momentum_point - new_points) * (new_points - points), axis=-1) > 0
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        beta = np.where(uphill, 0.0, (t - 1.0) / t_next)[:, None]
        momentum_point = new_points + beta * (new_points - points)
        points = new_points
        t = 1.0 if np.any(uphill) else t_next

    raise ProjectionError(
        f"Weighted projection did not converge in {MAX_ITERATIONS} iterations "
        f"(max KKT residual {residuals.max():.3e})"
    )


def project(cset, R, v):
    """Weighted projection of a single point."""
    points, iterations, residuals = project_many(cset, R, np.asarray(v, dtype=float)[None, :])
    return WeightedProjectionResult(point=points[0], iterations=iterations, kkt_residual=float(residuals[0]))


def contains(cset, u, tol=0.0):
    """True iff u lies within `tol` of U in the Euclidean norm."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != cset.dim:
        raise ProjectionError(f"Point dimension {u.shape[-1]} does not match set dimension {cset.dim}")
    distance = np.linalg.norm(u - cset.euclidean_projection(u), axis=-1)
    return bool(np.all(distance <= tol))


def sample_boundary_and_interior(cset, count, seed):
    """
    Deterministic sample of `count` points of U, alternating interior and
    boundary points (the whole space has no boundary: Gaussian points).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    m = cset.dim
    on_boundary = (np.arange(count) % 2) == 1

    if cset.kind == "whole":
        return rng.standard_normal((count, m))

    if cset.kind == "box":
        points = cset.lo + (cset.hi - cset.lo) * rng.uniform(size=(count, m))
        snap = rng.uniform(size=(count, m)) < 0.5
        snap[~on_boundary] = False
        # at least one active face per boundary point
        forced = rng.integers(0, m, size=count)
        snap[on_boundary, forced[on_boundary]] = True
        face = np.where(rng.uniform(size=(count, m)) < 0.5, cset.lo, cset.hi)
        return np.where(snap, face, points)

    if cset.kind == "orthant":
        points = np.abs(rng.standard_normal((count, m)))
        zero = rng.uniform(size=(count, m)) < 0.5
        zero[~on_boundary] = False
        forced = rng.integers(0, m, size=count)
        zero[on_boundary, forced[on_boundary]] = True
        return np.where(zero, 0.0, points)

    directions = rng.standard_normal((count, m))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    radii = cset.radius * rng.uniform(size=count) ** (1.0 / m)
    radii[on_boundary] = cset.radius
    return cset.center + directions * radii[:, None]
