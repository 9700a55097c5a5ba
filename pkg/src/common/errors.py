"""
Exception hierarchy shared by every stage of the lab.

The CLI maps these onto exit codes (see cli/commands.py).
"""


class LabError(Exception):
    """Base class for all errors raised by the lab."""


class ModelFileError(LabError, ValueError):
    """A model or config file could not be read or parsed."""


class ModelValidationError(LabError, ValueError):
    """Hard validation failure: the model cannot be used at all."""


class TreeError(LabError, ValueError):
    pass


class ProjectionError(LabError, ValueError):
    pass


class UnsupportedError(LabError, ValueError):
    pass


class SolverDivergedError(LabError):
    """
    Picard iteration did not converge.
    Carries the residual history and the α-path that was attempted.
    """

    def __init__(self, message, residual_history=None, alpha_path=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])
        self.alpha_path = list(alpha_path or [])
