from control.convex_set import (
    ConvexSet,
    WeightedProjectionResult,
    contains,
    project,
    project_many,
    sample_boundary_and_interior,
)

__all__ = [
    "ConvexSet",
    "WeightedProjectionResult",
    "contains",
    "project",
    "project_many",
    "sample_boundary_and_interior",
]
