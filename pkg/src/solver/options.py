from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

DAMPING_FLOOR = 1.0 / 64.0


class SolveOptions(BaseModel):
    """Knobs of the Picard / continuation solver."""

    model_config = ConfigDict(extra="forbid")

    picard_tol: float = Field(default=1e-10, gt=0)
    max_iters: int = Field(default=500, ge=1)
    damping: float = 1.0
    adaptive_damping: bool = True
    continuation_steps: int = Field(default=10, ge=1)
    mode: Literal["auto", "picard_only", "continuation"] = "auto"
    allow_permissive: bool = False

    @field_validator("damping")
    @classmethod
    def damping_in_unit_interval(cls, v):
        if not 0.0 < v <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        return v
