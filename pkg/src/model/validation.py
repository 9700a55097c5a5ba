"""
Model validation.

strict:      Q, L PSD; R PD; G PD.
permissive:  as strict but G only PSD (admits zero-weight analytic fixtures).

Dimension mismatches and non-symmetric weights are hard errors in either mode.
"""

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel

from common.errors import ModelValidationError
from model.spec import TIME_INDEXED, WEIGHTS, coefficient_shape

logger = logging.getLogger(__name__)

EIGEN_TOL = 1e-12
MAX_CONDITION = 1e8


class Violation(BaseModel):
    field: str
    rule: str
    detail: str


class ValidationReport(BaseModel):
    mode: Literal["strict", "permissive"]
    strict_pass: bool
    violations: list[Violation]


def _check_shapes(spec):
    n, m = spec.n, spec.m
    for key in TIME_INDEXED:
        expected = coefficient_shape(key, n, m)
        actual = getattr(spec, key).shape
        if tuple(actual) != expected:
            raise ModelValidationError(f"{key}: expected shape {expected}, got {tuple(actual)}")
    for key, expected in (("x0", (n,)), ("Phi", (n, n)), ("G", (n, n))):
        actual = getattr(spec, key).shape
        if actual != expected:
            raise ModelValidationError(f"{key}: expected shape {expected}, got {actual}")
    if spec.control_set.dim != m:
        raise ModelValidationError(f"control_set has dimension {spec.control_set.dim}, expected m={m}")


def _check_symmetry(spec):
    cells = {key: getattr(spec, key).values for key in WEIGHTS}
    cells["G"] = spec.G[None, ...]
    for key, values in cells.items():
        if not np.all(np.isfinite(values)):
            continue  # reported as a finiteness violation instead
        if np.any(values != np.swapaxes(values, -1, -2)):
            raise ModelValidationError(f"{key} is not symmetric")


def _eigen_extremes(values):
    eigenvalues = np.linalg.eigvalsh(values)
    return eigenvalues[..., 0].min(), eigenvalues[..., -1].max(), eigenvalues


def validate(spec, mode="strict"):
    """Check the standing assumptions. Pure; the same spec gives the same report."""
    if mode not in ("strict", "permissive"):
        raise ValueError(f"Unknown validation mode: {mode!r}")
    _check_shapes(spec)
    _check_symmetry(spec)

    violations = []

    def flag(field_name, rule, detail):
        violations.append(Violation(field=field_name, rule=rule, detail=detail))

    finite = True
    for key in TIME_INDEXED:
        if not np.all(np.isfinite(getattr(spec, key).values)):
            flag(key, "finite", "coefficient has non-finite entries")
            finite = False
    for key in ("x0", "Phi", "G"):
        if not np.all(np.isfinite(getattr(spec, key))):
            flag(key, "finite", "coefficient has non-finite entries")
            finite = False

    if finite:
        for key in ("Q", "L"):
            lowest, _, _ = _eigen_extremes(getattr(spec, key).values)
            if lowest < -EIGEN_TOL:
                flag(key, "psd", f"min eigenvalue {lowest:.3e} < 0")

        lowest, _, eigenvalues = _eigen_extremes(spec.R.values)
        if lowest <= EIGEN_TOL:
            flag("R", "pd", f"min eigenvalue {lowest:.3e} is not positive")
        else:
            condition = float((eigenvalues[..., -1] / eigenvalues[..., 0]).max())
            if not np.isfinite(condition):
                flag("R", "condition", "condition number is not finite")

        lowest, _, _ = _eigen_extremes(spec.G)
        if mode == "strict" and lowest <= EIGEN_TOL:
            flag("G", "pd", f"min eigenvalue {lowest:.3e} is not positive (strict mode)")
        elif mode == "permissive" and lowest < -EIGEN_TOL:
            flag("G", "psd", f"min eigenvalue {lowest:.3e} < 0")

    report = ValidationReport(mode=mode, strict_pass=not violations, violations=violations)
    logger.debug("Validated %s in %s mode: %d violation(s)", spec.name or "model", mode, len(violations))
    return report


def condition_number_R(spec):
    eigenvalues = np.linalg.eigvalsh(spec.R.values)
    return float((eigenvalues[..., -1] / eigenvalues[..., 0]).max())
