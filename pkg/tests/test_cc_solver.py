"""
Tests for the consistency-condition solver, the linear oracle and the
optimality diagnostics.
Run with: pytest tests/ -v
"""

import os
import sys
from dataclasses import replace

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from common.errors import ModelValidationError, SolverDivergedError, TreeError, UnsupportedError
from control.convex_set import ConvexSet, contains
from model.spec import make_model
from solver.cc_solver import respond_to_control, solve_auxiliary, solve_cc
from solver.diagnostics import (
    adjoint_means,
    check_max_principle,
    fixed_point_residual,
    hamiltonian,
    limiting_cost,
    solution_cost,
    stationarity_gap,
    summarize,
    terminal_residuals,
)
from solver.direct_linear import solve_cc_direct_linear
from solver.options import SolveOptions
from solver.scheme import TreeScheme, phi
from tree.noise_tree import TreeProcess, build, level_means
from tests.fixtures import fixture_model, random_scalar_model, scalar_model, zero_weight_model

TREE = build(8, 0.5)
SCALAR = scalar_model()
SCALAR_SOLUTION = solve_cc(SCALAR, TREE)
PERMISSIVE = SolveOptions(allow_permissive=True)


def _max_diff(a, b):
    diffs = [a.x.max_abs_diff(b.x), a.y.max_abs_diff(b.y), a.z.max_abs_diff(b.z),
             a.p.max_abs_diff(b.p), a.q.max_abs_diff(b.q), a.kk.max_abs_diff(b.kk),
             a.u.max_abs_diff(b.u)]
    diffs.append(float(np.abs(a.m_x - b.m_x).max()))
    diffs.append(float(np.abs(a.m_y - b.m_y).max()))
    return max(diffs)


# ─── Control Map Tests ────────────────────────────────────────────────────────

def test_phi_unconstrained_is_linear():
    R = np.array([[2.0]])
    B, K, D = np.array([[1.0]]), np.array([[0.5]]), np.array([[0.2]])
    u = phi(R, B, K, D, ConvexSet.whole(1), np.array([2.0]), np.array([1.0]), np.array([-1.0]))
    assert np.allclose(u, [(1.0 + 1.0 - 0.2) / 2.0])

def test_phi_projects_onto_box():
    R = np.eye(1)
    u = phi(R, np.eye(1), np.zeros((1, 1)), np.zeros((1, 1)), ConvexSet.box([-0.5], [0.5]),
            np.zeros(1), np.array([3.0]), np.zeros(1))
    assert u.tolist() == [0.5]

def test_phi_rejects_singular_weight():
    with pytest.raises(ValueError):
        phi(np.zeros((1, 1)), np.eye(1), np.eye(1), np.eye(1), ConvexSet.whole(1),
            np.zeros(1), np.zeros(1), np.zeros(1))


# ─── Solver Invariant Tests ───────────────────────────────────────────────────

def test_scalar_fixture_converges():
    assert SCALAR_SOLUTION.converged
    assert SCALAR_SOLUTION.final_residual < 1e-10
    assert SCALAR_SOLUTION.alpha_path == [1.0]

def test_solution_shapes():
    sol = SCALAR_SOLUTION
    assert len(sol.x.values) == TREE.depth + 1
    assert len(sol.z.values) == TREE.depth
    assert len(sol.u.values) == TREE.depth
    assert sol.m_x.shape == (TREE.depth + 1, 1)
    assert sol.x.at(TREE.depth).shape == (TREE.leaf_count, 1)

def test_means_are_consistent():
    sol = SCALAR_SOLUTION
    assert np.allclose(sol.m_x, level_means(TREE, sol.x), rtol=0.0, atol=1e-14)
    assert np.allclose(sol.m_y, level_means(TREE, sol.y), rtol=0.0, atol=1e-12)

def test_invariants_on_random_models():
    for seed in range(20):
        model = random_scalar_model(seed)
        sol = solve_cc(model, TREE)
        means = adjoint_means(TREE, sol)
        assert means["p"] < 1e-9 and means["q"] < 1e-9, seed
        terminal = terminal_residuals(model, TREE, sol)
        assert terminal["y_terminal"] == 0.0 and terminal["q_terminal"] == 0.0, seed
        assert fixed_point_residual(TREE, sol) < 1e-10, seed
        assert check_max_principle(model, TREE, sol, samples=50, seed=seed) <= 1e-8, seed

def test_oracle_matches_picard_on_random_models():
    for seed in range(20):
        model = random_scalar_model(seed)
        assert _max_diff(solve_cc(model, TREE), solve_cc_direct_linear(model, TREE)) < 1e-7, seed

def test_oracle_rejects_constrained_sets():
    with pytest.raises(UnsupportedError):
        solve_cc_direct_linear(fixture_model("box_constrained"), TREE)

def test_continuation_matches_picard():
    sol = solve_cc(SCALAR, TREE, SolveOptions(mode="continuation", continuation_steps=4))
    assert sol.alpha_path == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert _max_diff(sol, SCALAR_SOLUTION) < 1e-8

def test_damped_picard_matches_undamped():
    sol = solve_cc(SCALAR, TREE, SolveOptions(damping=0.5, adaptive_damping=False))
    assert _max_diff(sol, SCALAR_SOLUTION) < 1e-8

def test_solver_is_deterministic():
    again = solve_cc(SCALAR, TREE)
    assert _max_diff(again, SCALAR_SOLUTION) == 0.0
    assert again.residual_history == SCALAR_SOLUTION.residual_history

def test_stored_states_are_generated_by_stored_control():
    for model in (SCALAR, scalar_model(F=0.0, H=0.0, V=0.0)):
        sol = SCALAR_SOLUTION if model is SCALAR else solve_cc(model, TREE)
        sweep = TreeScheme(model, TREE).respond(sol.u.values)
        for k in range(TREE.depth + 1):
            assert np.array_equal(sweep.x[k], sol.x.at(k))
            assert np.array_equal(sweep.y[k], sol.y.at(k))
        assert np.array_equal(sweep.m_x, sol.m_x)
        assert np.array_equal(sweep.m_y, sol.m_y)

def test_picard_residual_decays_monotonically():
    sol = solve_cc(SCALAR, TREE, SolveOptions(mode="picard_only"))
    tail = sol.residual_history[-10:]
    assert len(tail) >= 2
    assert all(later <= earlier for earlier, later in zip(tail, tail[1:]))

def test_scheme_steps_land_on_right_hand_cells():
    model = scalar_model(T=0.3, A={"mesh": [0.0, 0.1, 0.3], "values": [1.0, 3.0]})
    tree = build(3, 0.3)
    assert tree.dt < 0.1
    assert [s.A[0, 0] for s in TreeScheme(model, tree).slices] == [1.0, 3.0, 3.0, 3.0]
    assert solve_cc(model, tree).converged


# ─── Degenerate Fixture Tests ─────────────────────────────────────────────────

def test_zero_weight_model_is_solved_immediately():
    model = zero_weight_model(control_set=ConvexSet.box([-1.0], [1.0]))
    sol = solve_cc(model, TREE, PERMISSIVE)
    assert sol.iterations <= 2
    for k in range(TREE.depth):
        assert np.array_equal(sol.u.at(k), np.zeros((2 ** k, 1)))
    for proc in (sol.p, sol.q, sol.kk):
        assert all(np.all(level == 0.0) for level in proc.values)
    assert solution_cost(model, TREE, sol) == 0.0

def test_zero_weight_control_is_projection_of_zero():
    model = zero_weight_model(control_set=ConvexSet.box([0.2], [1.0]))
    sol = solve_cc(model, TREE, PERMISSIVE)
    for k in range(TREE.depth):
        assert np.all(sol.u.at(k) == 0.2)

def test_permissive_model_needs_override():
    with pytest.raises(ModelValidationError):
        solve_cc(zero_weight_model(), TREE)

def test_invalid_model_is_refused_even_with_override():
    with pytest.raises(ModelValidationError):
        solve_cc(scalar_model(R=0.0), TREE, PERMISSIVE)

def test_ill_conditioned_R_is_refused():
    model = make_model(1, 2, 0.5, B=[[1.0, 1.0]], R=[[1.0, 0.0], [0.0, 1e-9]], G=1.0, Q=1.0, sigma=0.3)
    with pytest.raises(ModelValidationError):
        solve_cc(model, TREE)

def test_misaligned_mesh_is_refused():
    model = scalar_model(A={"mesh": [0.0, 0.3, 0.5], "values": [0.1, 0.2]})
    with pytest.raises(ModelValidationError):
        solve_cc(model, TREE)

def test_aligned_piecewise_mesh_is_accepted():
    model = scalar_model(A={"mesh": [0.0, 0.25, 0.5], "values": [0.1, -0.2]})
    assert solve_cc(model, TREE).converged

def test_tree_horizon_must_match():
    with pytest.raises(TreeError):
        solve_cc(SCALAR, build(8, 1.0))

def test_stiff_model_diverges_without_damping():
    options = SolveOptions(mode="picard_only", adaptive_damping=False, max_iters=50)
    with pytest.raises(SolverDivergedError) as excinfo:
        solve_cc(fixture_model("stiff"), build(6, 2.0), options)
    assert len(excinfo.value.residual_history) > 0
    assert excinfo.value.alpha_path == [1.0]


# ─── Optimality Tests ─────────────────────────────────────────────────────────

def test_max_principle_with_binding_box():
    model = fixture_model("box_constrained")
    sol = solve_cc(model, TREE)
    assert all(contains(model.control_set, level, 1e-12) for level in sol.u.values)
    assert any(np.any(np.isclose(np.abs(level), 0.3)) for level in sol.u.values)
    assert check_max_principle(model, TREE, sol) <= 1e-8

def test_perturbed_control_violates_max_principle():
    model = fixture_model("box_constrained")
    sol = solve_cc(model, TREE)
    assert check_max_principle(model, TREE, sol) <= 1e-8
    perturbed = replace(sol, u=TreeProcess(1, [np.zeros_like(level) for level in sol.u.values]))
    assert check_max_principle(model, TREE, perturbed) > 1e-3

def test_unconstrained_solution_is_stationary():
    assert stationarity_gap(SCALAR, TREE, SCALAR_SOLUTION) < 1e-12

def test_hamiltonian_is_maximised_by_the_control():
    base = hamiltonian(SCALAR, TREE, SCALAR_SOLUTION)
    for shift in (-0.1, 0.1):
        shifted = hamiltonian(SCALAR, TREE, SCALAR_SOLUTION, control=[u + shift for u in SCALAR_SOLUTION.u.values])
        assert all(np.all(h0 >= h1 - 1e-12) for h0, h1 in zip(base, shifted))

def test_auxiliary_problem_reproduces_consistent_solution():
    sol = solve_auxiliary(SCALAR, TREE, SCALAR_SOLUTION.m_x, SCALAR_SOLUTION.m_y)
    assert sol.frozen_means
    assert sol.u.max_abs_diff(SCALAR_SOLUTION.u) < 1e-8

def test_respond_to_control_reproduces_states():
    response = respond_to_control(SCALAR, TREE, SCALAR_SOLUTION.u, SCALAR_SOLUTION.m_x, SCALAR_SOLUTION.m_y)
    assert response.x.max_abs_diff(SCALAR_SOLUTION.x) < 1e-9
    assert response.y.max_abs_diff(SCALAR_SOLUTION.y) < 1e-9

def test_respond_to_control_checks_levels():
    with pytest.raises(ValueError):
        respond_to_control(SCALAR, TREE, SCALAR_SOLUTION.u.values[:-1], SCALAR_SOLUTION.m_x, SCALAR_SOLUTION.m_y)

def test_optimal_control_beats_perturbations():
    sol = SCALAR_SOLUTION
    own = respond_to_control(SCALAR, TREE, sol.u, sol.m_x, sol.m_y)
    best = limiting_cost(SCALAR, TREE, own.x, own.y, sol.u, sol.m_x, sol.m_y)
    rng = np.random.default_rng(3)
    for _ in range(10):
        control = TreeProcess(1, [u + 0.05 * rng.standard_normal(u.shape) for u in sol.u.values])
        other = respond_to_control(SCALAR, TREE, control, sol.m_x, sol.m_y)
        assert limiting_cost(SCALAR, TREE, other.x, other.y, control, sol.m_x, sol.m_y) >= best - 1e-12

def test_summary_payload():
    payload = summarize(SCALAR, TREE, SCALAR_SOLUTION, samples=10, seed=0)
    for key in ("converged", "iterations", "residual_history", "alpha_path", "fixed_point_residual",
                "terminal", "adjoint_means", "max_principle_violation", "limiting_cost"):
        assert key in payload
    assert payload["limiting_cost"] > 0.0


# ─── Brute Force Tests ────────────────────────────────────────────────────────

BOX = ConvexSet.box([-0.05], [0.3])


def _refined_argmin(f, lo, hi, points=21, rounds=6):
    """Grid search with successive zooms around the best grid point."""
    for _ in range(rounds):
        grid = np.linspace(lo, hi, points)
        best = int(np.argmin([f(g) for g in grid]))
        step = grid[1] - grid[0]
        lo, hi = max(lo, grid[best] - step), min(hi, grid[best] + step)
    return grid[best]

def _best_response(model, tree, u_bar):
    """argmin over U of the auxiliary cost against the means generated by u_bar."""
    generated = TreeScheme(model, tree).respond([np.array([[u_bar]])])

    def cost(v):
        response = respond_to_control(model, tree, [np.array([[v]])], generated.m_x, generated.m_y)
        return limiting_cost(model, tree, response.x, response.y, response.u, generated.m_x, generated.m_y)

    return _refined_argmin(cost, BOX.lo[0], BOX.hi[0])

def test_depth_one_constrained_model_matches_brute_force():
    model = scalar_model(G=2.0, control_set=BOX)
    tree = build(1, model.T)
    sol = solve_cc(model, tree)
    brute = _refined_argmin(lambda u: abs(_best_response(model, tree, u) - u), BOX.lo[0], BOX.hi[0])
    assert abs(sol.u.node(0, 0)[0] - brute) < 1e-4
    # the only active channel at depth one: u = P_U[−DG(Du + σ)/R]
    assert abs(sol.u.node(0, 0)[0] - (-0.05)) < 1e-12
