"""
Tests for N-agent simulation, backward evaluation and realized costs.
Run with: pytest tests/ -v
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from common.errors import UnsupportedError
from control.convex_set import ConvexSet
from population.backward import evaluate_backward, evaluate_backward_aggregate, evaluate_backward_individual
from population.costs import agent_cost_rows, cost_parts, realized_cost
from population.simulate import agent_average, draw_leaves, simulate_population
from solver.cc_solver import solve_cc
from solver.options import SolveOptions
from tree.noise_tree import build
from tests.fixtures import scalar_model, zero_weight_model

TREE = build(6, 0.5)
PERMISSIVE = SolveOptions(allow_permissive=True)

COUPLED = scalar_model()
COUPLED_CC = solve_cc(COUPLED, TREE)

# coupled only through the cost: every agent's dynamics match the generic agent
DECOUPLED = scalar_model(F=0.0, H=0.0, V=0.0)
DECOUPLED_CC = solve_cc(DECOUPLED, TREE)


# ─── Simulation Tests ─────────────────────────────────────────────────────────

def test_run_shapes():
    run = simulate_population(COUPLED, TREE, COUPLED_CC, 8, seed=1, replications=3)
    assert run.x.shape == (3, 8, TREE.depth + 1, 1)
    assert run.u.shape == (3, 8, TREE.depth, 1)
    assert run.x_avg.shape == (3, TREE.depth + 1, 1)
    assert run.nodes.shape == (3, 8, TREE.depth + 1)
    assert np.all(run.x[:, :, 0] == 1.0)

def test_population_needs_two_agents():
    with pytest.raises(ValueError):
        simulate_population(COUPLED, TREE, COUPLED_CC, 1, seed=0)

def test_population_refuses_unconverged_solution():
    from dataclasses import replace
    with pytest.raises(UnsupportedError):
        simulate_population(COUPLED, TREE, replace(COUPLED_CC, converged=False), 4, seed=0)

def test_simulation_is_deterministic():
    a = simulate_population(COUPLED, TREE, COUPLED_CC, 16, seed=5, replications=2)
    b = simulate_population(COUPLED, TREE, COUPLED_CC, 16, seed=5, replications=2)
    assert np.array_equal(a.leaves, b.leaves)
    assert np.array_equal(a.x, b.x)

def test_leaves_depend_only_on_seed_replication_and_agent():
    leaves = draw_leaves(TREE, 3, 2, np.arange(10))
    subset = draw_leaves(TREE, 3, 2, np.array([7, 2]))
    assert np.array_equal(subset, leaves[:, [7, 2]])
    assert np.all((leaves >= 0) & (leaves < TREE.leaf_count))

def test_average_is_exact():
    run = simulate_population(COUPLED, TREE, COUPLED_CC, 32, seed=2, replications=2)
    for k in range(TREE.depth + 1):
        assert np.array_equal(agent_average(run.x[:, :, k]), run.x_avg[:, k])

def test_controls_are_read_along_paths():
    run = simulate_population(COUPLED, TREE, COUPLED_CC, 8, seed=4)
    for k in range(TREE.depth):
        assert np.array_equal(run.u[0, :, k], COUPLED_CC.u.at(k)[run.nodes[0, :, k]])

def test_decoupled_agents_follow_the_generic_agent():
    run = simulate_population(DECOUPLED, TREE, DECOUPLED_CC, 8, seed=9, replications=2)
    for k in range(TREE.depth + 1):
        assert np.array_equal(run.x[:, :, k], DECOUPLED_CC.x.at(k)[run.nodes[..., k]])

def test_two_decoupled_agents_average_their_paths():
    run = simulate_population(DECOUPLED, TREE, DECOUPLED_CC, 2, seed=0)
    assert np.array_equal(run.x_avg[0], 0.5 * (run.x[0, 0] + run.x[0, 1]))

def test_zero_dynamics_stay_at_zero():
    model = scalar_model(x0=0.0, b=0.0, sigma=0.0, B=0.0, D=0.0)
    cc = solve_cc(model, TREE)
    run = simulate_population(model, TREE, cc, 8, seed=0)
    assert np.all(run.x == 0.0)
    assert np.all(run.x_avg == 0.0)

def test_exchangeability_under_agent_permutation():
    ids = np.arange(8)
    permuted = np.array([3, 7, 0, 5, 1, 6, 2, 4])
    a = simulate_population(COUPLED, TREE, COUPLED_CC, 8, seed=6, replications=2, agent_ids=ids)
    b = simulate_population(COUPLED, TREE, COUPLED_CC, 8, seed=6, replications=2, agent_ids=permuted)
    evaluate_backward(COUPLED, TREE, COUPLED_CC, a)
    evaluate_backward(COUPLED, TREE, COUPLED_CC, b)
    assert np.array_equal(a.x_avg, b.x_avg)
    assert np.array_equal(a.y_avg, b.y_avg)
    assert np.array_equal(a.x[:, permuted], b.x)
    assert np.array_equal(cost_parts(COUPLED, TREE, a)["total"][:, permuted], cost_parts(COUPLED, TREE, b)["total"])


# ─── Backward Evaluation Tests ────────────────────────────────────────────────

def test_decoupled_backward_matches_generic_agent():
    run = simulate_population(DECOUPLED, TREE, DECOUPLED_CC, 8, seed=3, replications=2)
    y = evaluate_backward_individual(DECOUPLED, TREE, DECOUPLED_CC, run)
    for k in range(TREE.depth + 1):
        expected = DECOUPLED_CC.y.at(k)[run.nodes[..., k]]
        assert np.allclose(y[:, :, k], expected, rtol=0.0, atol=1e-12)

def test_decoupled_aggregate_is_agent_average():
    run = simulate_population(DECOUPLED, TREE, DECOUPLED_CC, 8, seed=3, replications=2)
    evaluate_backward(DECOUPLED, TREE, DECOUPLED_CC, run)
    for k in range(TREE.depth + 1):
        assert np.allclose(run.y_avg[:, k], run.y[:, :, k].mean(axis=1), rtol=0.0, atol=1e-12)

def test_single_agent_selection():
    run = simulate_population(COUPLED, TREE, COUPLED_CC, 4, seed=1, replications=2)
    every = evaluate_backward_individual(COUPLED, TREE, COUPLED_CC, run)
    one = evaluate_backward_individual(COUPLED, TREE, COUPLED_CC, run, agent=2)
    assert np.array_equal(one, every[:, 2])

def test_zero_terminal_and_driver_give_zero_aggregate():
    model = scalar_model(Phi=0.0, M=0.0, H=0.0, K=0.0, f=0.0)
    cc = solve_cc(model, TREE)
    run = simulate_population(model, TREE, cc, 8, seed=0)
    assert np.all(evaluate_backward_aggregate(model, TREE, cc, run) == 0.0)

def test_backward_refuses_large_dimensions():
    from dataclasses import replace
    run = simulate_population(COUPLED, TREE, COUPLED_CC, 4, seed=0)
    with pytest.raises(UnsupportedError):
        evaluate_backward(replace(COUPLED, n=3), TREE, COUPLED_CC, run)

def test_backward_refuses_unconverged_solution():
    from dataclasses import replace
    run = simulate_population(COUPLED, TREE, COUPLED_CC, 4, seed=0)
    with pytest.raises(UnsupportedError):
        evaluate_backward(COUPLED, TREE, replace(COUPLED_CC, converged=False), run)


# ─── Cost Tests ───────────────────────────────────────────────────────────────

def test_costs_are_nonnegative_and_sum_to_total():
    run = simulate_population(COUPLED, TREE, COUPLED_CC, 16, seed=8, replications=3)
    cost = realized_cost(COUPLED, TREE, COUPLED_CC, run, agent=0)
    for part in (cost.tracking_x, cost.tracking_y, cost.control_effort, cost.terminal):
        assert part >= 0.0
    assert np.isclose(cost.total, cost.tracking_x + cost.tracking_y + cost.control_effort + cost.terminal)
    assert len(cost.replication_totals) == 3
    assert cost.standard_error >= 0.0

def test_zero_weight_cost_is_zero():
    model = zero_weight_model()
    cc = solve_cc(model, TREE, PERMISSIVE)
    run = simulate_population(model, TREE, cc, 8, seed=0, replications=2)
    assert realized_cost(model, TREE, cc, run, agent=3).total == 0.0

def test_unit_control_cost():
    model = scalar_model(T=1.0, G=0.0, Q=0.0, L=0.0, R=2.0, control_set=ConvexSet.box([1.0], [1.0]))
    tree = build(4, 1.0)
    cc = solve_cc(model, tree, PERMISSIVE)
    run = simulate_population(model, tree, cc, 4, seed=0)
    cost = realized_cost(model, tree, cc, run, agent=1)
    assert np.isclose(cost.total, 1.0, rtol=0.0, atol=1e-12)
    assert np.isclose(cost.control_effort, 1.0, rtol=0.0, atol=1e-12)

def test_agent_cost_rows_carry_y0_gap():
    run = simulate_population(COUPLED, TREE, COUPLED_CC, 4, seed=0, replications=2)
    rows = agent_cost_rows(COUPLED, TREE, COUPLED_CC, run)
    assert [row["agent"] for row in rows] == [0, 1, 2, 3]
    assert {"total", "tracking_x", "y0_gap_0"} <= set(rows[0])
    # every agent starts at the same deterministic root, so y₀ agrees across agents
    assert all(abs(row["y0_gap_0"]) < 1e-12 for row in rows)
