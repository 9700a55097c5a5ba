from model.spec import (
    CoefficientSlice,
    ModelSpec,
    PiecewiseConstant,
    coeff_at,
    coeff_at_step,
    load_model,
    make_model,
    model_to_dict,
    parse_model,
)
from model.validation import ValidationReport, Violation, validate

__all__ = [
    "CoefficientSlice",
    "ModelSpec",
    "PiecewiseConstant",
    "ValidationReport",
    "Violation",
    "coeff_at",
    "coeff_at_step",
    "load_model",
    "make_model",
    "model_to_dict",
    "parse_model",
    "validate",
]
