from population.backward import evaluate_backward, evaluate_backward_aggregate, evaluate_backward_individual
from population.costs import CostBreakdown, agent_cost_rows, realized_cost
from population.simulate import PopulationRun, agent_average, simulate_population

__all__ = [
    "CostBreakdown",
    "PopulationRun",
    "agent_average",
    "agent_cost_rows",
    "evaluate_backward",
    "evaluate_backward_aggregate",
    "evaluate_backward_individual",
    "realized_cost",
    "simulate_population",
]
