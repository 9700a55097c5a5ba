"""Acceptance summary of a nash-rates run."""

import logging
import math

from pydantic import BaseModel

from nash.rates import rate_fit

logger = logging.getLogger(__name__)

AGGREGATE_SLOPE = (-1.35, -0.65)
AGGREGATE_R2 = 0.9
COST_SLOPE = (-0.85, -0.25)
COST_R2 = 0.8
EPSILON_SE_SLACK = 2.0


class Criterion(BaseModel):
    name: str
    passed: bool
    detail: str
    slope: float | None = None
    r_squared: float | None = None


def _slope_criterion(name, rows, bounds, min_r2=None):
    try:
        fit = rate_fit(rows)
    except ValueError as e:
        return Criterion(name=name, passed=False, detail=str(e))
    in_range = bounds[0] <= fit.slope <= bounds[1]
    good_fit = min_r2 is None or fit.r_squared >= min_r2
    detail = f"slope {fit.slope:.3f} in [{bounds[0]}, {bounds[1]}]"
    if min_r2 is not None:
        detail += f", R² {fit.r_squared:.3f} >= {min_r2}"
    if fit.note:
        detail += f" ({fit.note})"
    return Criterion(name=name, passed=in_range and good_fit, detail=detail, slope=fit.slope, r_squared=fit.r_squared)


def _slope_or_none(rows):
    try:
        return rate_fit(rows).slope
    except ValueError:
        return None


def epsilon_criteria(nash_rows):
    """ε̂ nonincreasing up to 2 standard errors and below C/√N with C = 2 ε̂(N₀) √N₀."""
    rows = sorted(nash_rows, key=lambda row: row.N)
    if not rows:
        return [Criterion(name="epsilon_envelope", passed=False, detail="no rows")]
    monotone = all(
        later.epsilon <= earlier.epsilon + EPSILON_SE_SLACK * math.hypot(earlier.epsilon_se, later.epsilon_se)
        for earlier, later in zip(rows, rows[1:])
    )
    first = rows[0]
    constant = 2.0 * first.epsilon * math.sqrt(first.N)
    enveloped = all(
        row.epsilon <= constant / math.sqrt(row.N) + EPSILON_SE_SLACK * row.epsilon_se for row in rows
    )
    return [
        Criterion(name="epsilon_monotone", passed=monotone, detail="ε̂ nonincreasing within 2 standard errors"),
        Criterion(name="epsilon_envelope", passed=enveloped, detail=f"ε̂(N) <= {constant:.3e}/√N (+2 se)"),
    ]


def acceptance_summary(gap_table, nash_rows):
    """Pass/fail per criterion plus the fitted slopes."""
    criteria = [
        _slope_criterion("gap_x_avg_rate", gap_table.column("gap_x_avg"), AGGREGATE_SLOPE, AGGREGATE_R2),
        _slope_criterion("gap_y_avg_rate", gap_table.column("gap_y_avg"), AGGREGATE_SLOPE, AGGREGATE_R2),
        _slope_criterion("gap_x_indiv_rate", gap_table.column("gap_x_indiv"), AGGREGATE_SLOPE),
        _slope_criterion("cost_dispersion_rate", gap_table.column("cost_dispersion"), COST_SLOPE, COST_R2),
    ]
    criteria.extend(epsilon_criteria(nash_rows))
    epsilon_slope = _slope_or_none([(row.N, row.epsilon) for row in nash_rows])
    # the bias |E cost - J| is reported, not gated: it may decay faster than 1/√N
    cost_gap_slope = _slope_or_none(gap_table.column("cost_gap"))

    passed = all(c.passed for c in criteria)
    for c in criteria:
        logger.info("%s %s: %s", "PASS" if c.passed else "FAIL", c.name, c.detail)
    return {
        "passed": passed,
        "criteria": [c.model_dump(mode="json") for c in criteria],
        "epsilon_slope": epsilon_slope,
        "cost_gap_slope": cost_gap_slope,
        "limiting_cost": gap_table.limiting_cost,
    }
