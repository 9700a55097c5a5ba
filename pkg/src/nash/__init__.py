from nash.best_response import CandidateSpec, NashRow, best_response_gain, build_candidates
from nash.gaps import GapRow, GapTable, gap_statistics
from nash.rates import RateFit, rate_fit
from nash.summary import acceptance_summary

__all__ = [
    "CandidateSpec",
    "GapRow",
    "GapTable",
    "NashRow",
    "RateFit",
    "acceptance_summary",
    "best_response_gain",
    "build_candidates",
    "gap_statistics",
    "rate_fit",
]
