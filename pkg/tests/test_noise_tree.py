"""
Tests for the scenario tree and tree-indexed processes.
Run with: pytest tests/ -v
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from common.errors import TreeError
from tree.noise_tree import (
    TreeProcess,
    brownian_motion,
    build,
    conditional_expectation,
    conditional_expectation_table,
    dump_csv,
    expectation,
    level_means,
    martingale_representation,
    split_level,
)

# √Δt = 1/2 keeps every tree quantity dyadic
DYADIC_TREE = build(4, 1.0)


# ─── Structure Tests ──────────────────────────────────────────────────────────

def test_build_rejects_bad_depths():
    for depth in (0, 21, -1):
        with pytest.raises(TreeError):
            build(depth, 1.0)
    with pytest.raises(TreeError):
        build(2.5, 1.0)

def test_counts_and_probabilities():
    tree = build(3, 0.6)
    assert tree.node_count == 15
    assert tree.leaf_count == 8
    assert tree.probabilities(3).sum() == 1.0
    assert np.isclose(tree.dt, 0.2)

def test_children_and_parent():
    tree = build(3, 1.0)
    assert tree.children(1, 1) == ((2, 2), (2, 3))
    assert tree.parent(2, 3) == (1, 1)
    with pytest.raises(TreeError):
        tree.children(3, 0)
    with pytest.raises(TreeError):
        tree.parent(0, 0)
    with pytest.raises(TreeError):
        tree.children(1, 2)

def test_increments_alternate_up_and_down():
    assert DYADIC_TREE.increments(2).tolist() == [0.5, -0.5, 0.5, -0.5]
    with pytest.raises(TreeError):
        DYADIC_TREE.increments(0)

def test_ancestors_follow_binary_digits():
    tree = build(3, 1.0)
    # leaf 5 = 0b101: down, up, down
    assert tree.ancestors([5])[0].tolist() == [0, 1, 2, 5]
    assert tree.increment_signs([5])[0].tolist() == [-1.0, 1.0, -1.0]

def test_brownian_motion_matches_leaf_signs():
    W = brownian_motion(DYADIC_TREE)
    leaves = np.arange(DYADIC_TREE.leaf_count)
    along = W.along(DYADIC_TREE, leaves)[:, :, 0]
    walks = np.concatenate([np.zeros((len(leaves), 1)),
                            np.cumsum(DYADIC_TREE.increment_signs(leaves) * 0.5, axis=1)], axis=1)
    assert np.array_equal(along, walks)


# ─── Expectation Tests ────────────────────────────────────────────────────────

def test_brownian_moments_are_exact_on_dyadic_tree():
    W = brownian_motion(DYADIC_TREE)
    squares = TreeProcess(1, [v ** 2 for v in W.values])
    for k in range(DYADIC_TREE.depth + 1):
        assert expectation(DYADIC_TREE, W, k)[0] == 0.0
        assert expectation(DYADIC_TREE, squares, k)[0] == k * DYADIC_TREE.dt

def test_brownian_moments_on_float_tree():
    tree = build(10, 0.7)
    W = brownian_motion(tree)
    squares = TreeProcess(1, [v ** 2 for v in W.values])
    for k in range(tree.depth + 1):
        assert abs(expectation(tree, W, k)[0]) <= 1e-14
        assert abs(expectation(tree, squares, k)[0] - k * tree.dt) <= 1e-14

def test_expectation_rejects_wrong_level_size():
    broken = TreeProcess(1, [np.zeros((1, 1)), np.zeros((3, 1))])
    with pytest.raises(TreeError):
        expectation(DYADIC_TREE, broken, 1)

def test_conditional_expectation_averages_children():
    W = brownian_motion(DYADIC_TREE)
    for j in range(4):
        assert conditional_expectation(DYADIC_TREE, W, 2, j)[0] == W.node(2, j)[0]

def test_conditional_expectation_table_is_tower_consistent():
    rng = np.random.default_rng(0)
    proc = TreeProcess(2, [rng.standard_normal((2 ** k, 2)) for k in range(DYADIC_TREE.depth + 1)])
    table = conditional_expectation_table(DYADIC_TREE, proc)
    s = DYADIC_TREE.depth
    assert np.allclose(table[s][s], proc.at(s))
    assert np.allclose(table[s][0][0], level_means(DYADIC_TREE, proc)[s], atol=1e-15)
    for k in range(s):
        up, down = table[s][k + 1][0::2], table[s][k + 1][1::2]
        assert np.allclose(table[s][k], 0.5 * (up + down), atol=1e-15)


# ─── Martingale Representation Tests ──────────────────────────────────────────

def test_martingale_representation_reconstructs_exactly():
    rng = np.random.default_rng(11)
    for _ in range(10_000):
        k = int(rng.integers(0, DYADIC_TREE.depth))
        j = int(rng.integers(0, 2 ** k))
        xi_up = rng.integers(-1024, 1024, size=3) / 16.0
        xi_dn = rng.integers(-1024, 1024, size=3) / 16.0
        mean, z = martingale_representation(DYADIC_TREE, k, j, xi_up, xi_dn)
        assert np.array_equal(mean + z * DYADIC_TREE.sqrt_dt, xi_up)
        assert np.array_equal(mean - z * DYADIC_TREE.sqrt_dt, xi_dn)

def test_martingale_representation_of_brownian_increment():
    mean, z = martingale_representation(DYADIC_TREE, 0, 0, [0.5], [-0.5])
    assert mean.tolist() == [0.0]
    assert z.tolist() == [1.0]

def test_martingale_representation_rejects_leaves():
    with pytest.raises(TreeError):
        martingale_representation(DYADIC_TREE, DYADIC_TREE.depth, 0, [0.0], [0.0])

def test_split_level_matches_nodewise_representation():
    W = brownian_motion(DYADIC_TREE)
    squares = [v ** 2 for v in W.values]
    means, z = split_level(DYADIC_TREE, squares[3])
    for j in range(4):
        mean_j, z_j = martingale_representation(DYADIC_TREE, 2, j, squares[3][2 * j], squares[3][2 * j + 1])
        assert np.array_equal(means[j], mean_j)
        assert np.array_equal(z[j], z_j)


# ─── Debug Dump Tests ─────────────────────────────────────────────────────────

def test_dump_csv_writes_one_row_per_node(tmp_path):
    tree = build(2, 1.0)
    path = dump_csv(tree, {"W": brownian_motion(tree)}, tmp_path / "tree.csv", stamp={"config_hash": "abc", "seed": 1})
    raw = path.read_bytes()
    assert raw.count(b"\r\n") == 1 + tree.node_count
    assert raw.startswith(b"config_hash,seed,process,level,t,path,value_0")
