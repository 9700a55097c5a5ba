"""
Shared model builders for the test suite.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from control.convex_set import ConvexSet
from model.spec import load_model, make_model

MODELS_DIR = os.path.join(os.path.dirname(__file__), "..", "data", "models")

SCALAR_COEFFICIENTS = {
    "A": 0.1, "B": 1.0, "F": 0.1, "b": 0.0, "D": 0.2, "sigma": 0.3,
    "M": 0.1, "U_coef": 0.1, "H": 0.1, "V": 0.1, "K": 0.1, "f": 0.0,
    "Q": 1.0, "L": 1.0, "R": 1.0,
}


def model_path(name):
    return os.path.join(MODELS_DIR, f"{name}.json")


def fixture_model(name):
    return load_model(model_path(name))[0]


def scalar_model(T=0.5, x0=1.0, Phi=0.5, G=1.0, control_set=None, **overrides):
    """The coupled scalar fixture, built in memory, with any coefficient overridden."""
    coefficients = dict(SCALAR_COEFFICIENTS)
    coefficients.update(overrides)
    return make_model(1, 1, T, x0=x0, Phi=Phi, G=G, control_set=control_set, name="scalar", **coefficients)


def zero_weight_model(control_set=None):
    return scalar_model(G=0.0, Q=0.0, L=0.0, b=0.1, f=0.1, control_set=control_set)


def no_coupling_model():
    return scalar_model(G=0.0, Q=0.0, L=0.0, F=0.0, H=0.0, V=0.0, b=0.1, f=0.1)


def random_scalar_model(seed, control_set=None, T=0.5):
    """Strict-valid scalar model with coefficients small enough for undamped Picard."""
    rng = np.random.default_rng(seed)
    uniform = lambda lo, hi: float(rng.uniform(lo, hi))
    return make_model(
        1, 1, T,
        x0=uniform(-1.0, 1.0),
        Phi=uniform(-0.5, 0.5),
        G=uniform(0.2, 1.0),
        control_set=control_set,
        name=f"random_{seed}",
        A=uniform(-0.5, 0.5),
        B=uniform(0.5, 1.0),
        F=uniform(-0.3, 0.3),
        b=uniform(-0.2, 0.2),
        D=uniform(0.0, 0.3),
        sigma=uniform(0.1, 0.5),
        M=uniform(-0.3, 0.3),
        U_coef=uniform(-0.3, 0.3),
        H=uniform(-0.3, 0.3),
        V=uniform(-0.3, 0.3),
        K=uniform(-0.3, 0.3),
        f=uniform(-0.2, 0.2),
        Q=uniform(0.0, 1.0),
        L=uniform(0.0, 1.0),
        R=uniform(1.0, 2.0),
    )


def random_weight(rng, m, condition=10.0):
    """Random SPD matrix with eigenvalues in [1, condition]."""
    basis, _ = np.linalg.qr(rng.standard_normal((m, m)))
    eigenvalues = rng.uniform(1.0, condition, size=m)
    R = basis @ np.diag(eigenvalues) @ basis.T
    return 0.5 * (R + R.T)


def random_set(rng, kind, m):
    if kind == "whole":
        return ConvexSet.whole(m)
    if kind == "orthant":
        return ConvexSet.orthant(m)
    if kind == "box":
        lo = rng.uniform(-1.0, 0.0, size=m)
        return ConvexSet.box(lo, lo + rng.uniform(0.1, 2.0, size=m))
    return ConvexSet.ball(rng.uniform(-0.5, 0.5, size=m), rng.uniform(0.2, 1.5))
