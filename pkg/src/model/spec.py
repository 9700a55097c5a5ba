"""
Model definition: coefficient data of the game, model-file parsing and
coefficient evaluation.

Time-dependent coefficients are piecewise constant on a declared mesh
t_0 = 0 < t_1 < ... < t_K = T and right-continuous at mesh points; t = T
evaluates on the last cell.
"""

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from common.errors import ModelFileError, ModelValidationError
from control.convex_set import ConvexSet

logger = logging.getLogger(__name__)

# Shapes of every time-indexed coefficient, in terms of (n, m)
SQUARE_STATE = ("A", "F", "M", "U_coef", "H", "V", "Q", "L")
STATE_BY_CONTROL = ("B", "D", "K")
STATE_VECTORS = ("b", "sigma", "f")
SQUARE_CONTROL = ("R",)
TIME_INDEXED = SQUARE_STATE + STATE_BY_CONTROL + STATE_VECTORS + SQUARE_CONTROL

WEIGHTS = ("Q", "L", "R")
SYMMETRY_TOL = 1e-12


def coefficient_shape(name, n, m):
    if name in SQUARE_STATE:
        return (n, n)
    if name in STATE_BY_CONTROL:
        return (n, m)
    if name in STATE_VECTORS:
        return (n,)
    if name in SQUARE_CONTROL:
        return (m, m)
    raise KeyError(name)


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """values[c] holds the coefficient on [mesh[c], mesh[c+1])."""

    mesh: np.ndarray
    values: np.ndarray

    @classmethod
    def constant(cls, value, T):
        value = np.asarray(value, dtype=float)
        return cls(np.array([0.0, float(T)]), value[None, ...])

    @property
    def shape(self):
        return self.values.shape[1:]

    def cell_index(self, t):
        index = int(np.searchsorted(self.mesh, t, side="right")) - 1
        return min(max(index, 0), len(self.values) - 1)

    def step_index(self, k, dt):
        """Cell holding tree step k; mesh points are snapped to the step grid."""
        steps = np.round(self.mesh / dt)
        index = int(np.searchsorted(steps, k, side="right")) - 1
        return min(max(index, 0), len(self.values) - 1)

    def at(self, t):
        return self.values[self.cell_index(t)]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    n: int
    m: int
    T: float
    x0: np.ndarray
    Phi: np.ndarray
    G: np.ndarray
    control_set: ConvexSet
    A: PiecewiseConstant
    B: PiecewiseConstant
    F: PiecewiseConstant
    b: PiecewiseConstant
    D: PiecewiseConstant
    sigma: PiecewiseConstant
    M: PiecewiseConstant
    U_coef: PiecewiseConstant
    H: PiecewiseConstant
    V: PiecewiseConstant
    K: PiecewiseConstant
    f: PiecewiseConstant
    Q: PiecewiseConstant
    L: PiecewiseConstant
    R: PiecewiseConstant
    name: str = ""

    def breakpoints(self):
        """Union of all coefficient mesh points."""
        points = np.concatenate([getattr(self, key).mesh for key in TIME_INDEXED])
        return np.unique(points)


@dataclass(frozen=True, eq=False)
class CoefficientSlice:
    """All coefficients frozen at one time t."""

    t: float
    A: np.ndarray
    B: np.ndarray
    F: np.ndarray
    b: np.ndarray
    D: np.ndarray
    sigma: np.ndarray
    M: np.ndarray
    U_coef: np.ndarray
    H: np.ndarray
    V: np.ndarray
    K: np.ndarray
    f: np.ndarray
    Q: np.ndarray
    L: np.ndarray
    R: np.ndarray
    Phi: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)


def coeff_at(spec, t):
    """Evaluate every coefficient at time t (right-continuous, closed at T)."""
    if not 0.0 <= t <= spec.T:
        raise ValueError(f"t={t} is outside [0, {spec.T}]")
    values = {key: getattr(spec, key).at(t) for key in TIME_INDEXED}
    return CoefficientSlice(t=float(t), Phi=spec.Phi, G=spec.G, **values)


def coeff_at_step(spec, k, dt):
    """
    Coefficients on tree step k (time k·dt). The cell is chosen from the step
    index, so a time that rounds just below a mesh point still lands on the
    right-hand cell. Assumes the mesh is aligned with the grid.
    """
    values = {key: getattr(spec, key).values[getattr(spec, key).step_index(k, dt)] for key in TIME_INDEXED}
    return CoefficientSlice(t=float(min(k * dt, spec.T)), Phi=spec.Phi, G=spec.G, **values)


# ─── Building specs ───────────────────────────────────────────────────────────

def _as_array(value, shape, name):
    """Scalars broadcast to c·I for square shapes and to a constant fill otherwise."""
    array = np.asarray(value, dtype=float)
    if array.ndim == 0:
        if len(shape) == 2 and shape[0] == shape[1]:
            return float(array) * np.eye(shape[0])
        return np.full(shape, float(array))
    if array.shape != shape:
        raise ModelValidationError(f"{name}: expected shape {shape}, got {array.shape}")
    return array


def _symmetrize_if_close(array):
    # stored symmetric exactly when the input is symmetric up to rounding
    if array.ndim < 2:
        return array
    transposed = np.swapaxes(array, -1, -2)
    scale = max(1.0, float(np.abs(array).max())) if array.size else 1.0
    if np.all(np.abs(array - transposed) <= SYMMETRY_TOL * scale):
        return 0.5 * (array + transposed)
    return array


def _as_piecewise(value, name, n, m, T):
    shape = coefficient_shape(name, n, m)
    if value is None:
        return PiecewiseConstant.constant(np.zeros(shape), T)
    if isinstance(value, PiecewiseConstant):
        cells = [_as_array(v, shape, name) for v in value.values]
        mesh = np.asarray(value.mesh, dtype=float)
    elif isinstance(value, dict):
        mesh = np.asarray(value["mesh"], dtype=float)
        cells = [_as_array(v, shape, name) for v in value["values"]]
    else:
        return PiecewiseConstant.constant(_weight_ready(name, _as_array(value, shape, name)), T)

    if len(cells) != len(mesh) - 1:
        raise ModelValidationError(f"{name}: {len(mesh)} mesh points need {len(mesh) - 1} values, got {len(cells)}")
    if mesh[0] != 0.0 or not np.isclose(mesh[-1], T, rtol=0.0, atol=1e-12):
        raise ModelValidationError(f"{name}: mesh must start at 0 and end at T={T}")
    if np.any(np.diff(mesh) <= 0):
        raise ModelValidationError(f"{name}: mesh must be strictly increasing")
    mesh = mesh.copy()
    mesh[-1] = T
    return PiecewiseConstant(mesh, _weight_ready(name, np.stack(cells)))


def _weight_ready(name, array):
    return _symmetrize_if_close(array) if name in WEIGHTS else array


def make_model(n, m, T, x0=0.0, Phi=0.0, G=0.0, control_set=None, name="", **coefficients):
    """
    Build a ModelSpec from scalars, arrays, {mesh, values} dicts or
    PiecewiseConstant objects. Omitted coefficients are zero.
    """
    unknown = set(coefficients) - set(TIME_INDEXED)
    if unknown:
        raise ModelValidationError(f"Unknown coefficient(s): {sorted(unknown)}")
    if n < 1 or m < 1:
        raise ModelValidationError("Dimensions n and m must be >= 1")
    if not T > 0:
        raise ModelValidationError("Horizon T must be positive")

    if control_set is None:
        control_set = ConvexSet.whole(m)
    elif isinstance(control_set, dict):
        control_set = ConvexSet.from_dict(control_set, m)
    if control_set.dim != m:
        raise ModelValidationError(f"control_set has dimension {control_set.dim}, expected m={m}")

    piecewise = {key: _as_piecewise(coefficients.get(key), key, n, m, T) for key in TIME_INDEXED}
    return ModelSpec(
        n=int(n),
        m=int(m),
        T=float(T),
        x0=_as_array(x0, (n,), "x0"),
        Phi=_as_array(Phi, (n, n), "Phi"),
        G=_symmetrize_if_close(_as_array(G, (n, n), "G")),
        control_set=control_set,
        name=name,
        **piecewise,
    )


# ─── Model files ──────────────────────────────────────────────────────────────

class PiecewiseDocument(BaseModel):
    mesh: list[float]
    values: list[Any]

    @field_validator("mesh")
    @classmethod
    def mesh_must_be_increasing(cls, v):
        if len(v) < 2:
            raise ValueError("mesh needs at least two points")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("mesh must be strictly increasing")
        return v


Coefficient = float | list[Any] | PiecewiseDocument | None


class ModelDocument(BaseModel):
    """JSON model file. Matrices are row-major nested arrays."""

    model_config = ConfigDict(extra="forbid")

    name: str = ""
    description: str = ""
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    T: float = Field(gt=0)
    x0: float | list[float] = 0.0
    Phi: float | list[Any] = 0.0
    G: float | list[Any] = 0.0
    control_set: dict[str, Any] = Field(default_factory=lambda: {"kind": "whole"})
    A: Coefficient = None
    B: Coefficient = None
    F: Coefficient = None
    b: Coefficient = None
    D: Coefficient = None
    sigma: Coefficient = None
    M: Coefficient = None
    U_coef: Coefficient = None
    H: Coefficient = None
    V: Coefficient = None
    K: Coefficient = None
    f: Coefficient = None
    Q: Coefficient = None
    L: Coefficient = None
    R: Coefficient = None

    @field_validator("control_set")
    @classmethod
    def control_set_needs_kind(cls, v):
        if "kind" not in v:
            raise ValueError("control_set needs a 'kind'")
        return v

    @model_validator(mode="after")
    def meshes_span_horizon(self):
        for key in TIME_INDEXED:
            value = getattr(self, key)
            if isinstance(value, PiecewiseDocument):
                if value.mesh[0] != 0.0 or abs(value.mesh[-1] - self.T) > 1e-12:
                    raise ValueError(f"{key}: mesh must start at 0 and end at T={self.T}")
        return self

    def to_spec(self):
        coefficients = {}
        for key in TIME_INDEXED:
            value = getattr(self, key)
            if isinstance(value, PiecewiseDocument):
                value = value.model_dump()
            coefficients[key] = value
        return make_model(
            self.n, self.m, self.T,
            x0=self.x0, Phi=self.Phi, G=self.G,
            control_set=self.control_set, name=self.name,
            **coefficients,
        )


def parse_model(text, source="<string>"):
    try:
        document = ModelDocument.model_validate(json.loads(text))
    except json.JSONDecodeError as e:
        raise ModelFileError(f"{source}: not valid JSON ({e})") from e
    except ValidationError as e:
        raise ModelFileError(f"{source}: {e}") from e
    return document.to_spec()


def load_model(path):
    """Read and parse a model file. Returns (spec, raw bytes)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ModelFileError(f"Cannot read model file {path}: {e}") from e
    spec = parse_model(raw.decode("utf-8"), source=str(path))
    logger.info("Loaded model %s (n=%d, m=%d, T=%g, set=%s)", path.name, spec.n, spec.m, spec.T, spec.control_set.kind)
    return spec, raw


def model_to_dict(spec):
    """Inverse of parse_model, used for dumping effective models."""
    data = {
        "name": spec.name,
        "n": spec.n,
        "m": spec.m,
        "T": spec.T,
        "x0": spec.x0.tolist(),
        "Phi": spec.Phi.tolist(),
        "G": spec.G.tolist(),
        "control_set": spec.control_set.to_dict(),
    }
    for item in fields(ModelSpec):
        if item.name in TIME_INDEXED:
            pc = getattr(spec, item.name)
            data[item.name] = {"mesh": pc.mesh.tolist(), "values": pc.values.tolist()}
    return data
