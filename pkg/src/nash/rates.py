import logging
import math

import numpy as np
from pydantic import BaseModel
from scipy.stats import linregress

logger = logging.getLogger(__name__)

MIN_POINTS = 3


class RateFit(BaseModel):
    slope: float
    intercept: float
    r_squared: float
    points: int
    excluded: list[int]
    note: str = ""


def rate_fit(rows):
    """Least squares on (log N, log value). Non-positive values are dropped with a note."""
    rows = [(int(N), float(value)) for N, value in rows]
    kept = [(N, v) for N, v in rows if v > 0 and math.isfinite(v)]
    excluded = [N for N, v in rows if not (v > 0 and math.isfinite(v))]
    note = ""
    if excluded:
        note = f"excluded non-positive values at N={excluded}"
        logger.warning("Rate fit: %s", note)
    if len(kept) < MIN_POINTS:
        raise ValueError(f"Rate fit needs at least {MIN_POINTS} positive values, got {len(kept)}")

    log_n = np.log([N for N, _ in kept])
    log_v = np.log([v for _, v in kept])
    result = linregress(log_n, log_v)
    return RateFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        r_squared=float(result.rvalue ** 2),
        points=len(kept),
        excluded=excluded,
        note=note,
    )
