from tree.noise_tree import (
    ScenarioTree,
    TreeProcess,
    build,
    conditional_expectation,
    expectation,
    martingale_representation,
)

__all__ = [
    "ScenarioTree",
    "TreeProcess",
    "build",
    "conditional_expectation",
    "expectation",
    "martingale_representation",
]
