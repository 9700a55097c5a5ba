"""
Binary scenario tree: the discrete substitute for a Brownian filtration.

Indexing is level-major. Node (k, j) for j in [0, 2^k) has probability 2^-k,
children (k+1, 2j) on the up branch (ΔW = +√Δt) and (k+1, 2j+1) on the down
branch (ΔW = −√Δt). A leaf index written in binary spells its path from the
root, most significant bit first (0 = up).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from common.artifacts import write_csv
from common.errors import TreeError

logger = logging.getLogger(__name__)

MAX_DEPTH = 20


@dataclass(frozen=True)
class ScenarioTree:
    depth: int
    T: float

    @property
    def dt(self):
        return self.T / self.depth

    @property
    def sqrt_dt(self):
        return math.sqrt(self.dt)

    @property
    def node_count(self):
        return 2 ** (self.depth + 1) - 1

    @property
    def leaf_count(self):
        return 2 ** self.depth

    def times(self):
        return np.arange(self.depth + 1) * self.dt

    def level_size(self, k):
        self._check_level(k)
        return 2 ** k

    def probabilities(self, k):
        return np.full(self.level_size(k), 2.0 ** -k)

    def increments(self, k):
        """ΔW on the branch entering each node of level k ≥ 1."""
        if k < 1:
            raise TreeError("The root has no incoming increment")
        signs = np.where(np.arange(self.level_size(k)) % 2 == 0, 1.0, -1.0)
        return signs * self.sqrt_dt

    def parent(self, k, j):
        if k == 0:
            raise TreeError("The root has no parent")
        return k - 1, j // 2

    def children(self, k, j):
        self._check_node(k, j)
        if k == self.depth:
            raise TreeError(f"Node ({k}, {j}) is a leaf")
        return (k + 1, 2 * j), (k + 1, 2 * j + 1)

    def ancestors(self, leaves):
        """Node index at every level 0..n for each leaf. Shape (len(leaves), n+1)."""
        leaves = np.asarray(leaves, dtype=np.int64)
        shifts = self.depth - np.arange(self.depth + 1)
        return leaves[..., None] >> shifts

    def increment_signs(self, leaves):
        """±1 per step for each leaf path. Shape (len(leaves), n)."""
        leaves = np.asarray(leaves, dtype=np.int64)
        shifts = self.depth - 1 - np.arange(self.depth)
        bits = (leaves[..., None] >> shifts) & 1
        return 1.0 - 2.0 * bits

    def _check_level(self, k):
        if not 0 <= k <= self.depth:
            raise TreeError(f"Level {k} outside [0, {self.depth}]")

    def _check_node(self, k, j):
        self._check_level(k)
        if not 0 <= j < 2 ** k:
            raise TreeError(f"Path index {j} outside level {k}")


@dataclass
class TreeProcess:
    """
    One d-vector per node for levels first_level..first_level+len(values)-1.
    values[i] has shape (2^(first_level+i), d).
    """

    dim: int
    values: list
    first_level: int = 0

    @classmethod
    def zeros(cls, tree, dim, last_level=None):
        last = tree.depth if last_level is None else last_level
        return cls(dim, [np.zeros((2 ** k, dim)) for k in range(last + 1)])

    @classmethod
    def constant(cls, tree, value, last_level=None):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        last = tree.depth if last_level is None else last_level
        return cls(value.size, [np.tile(value, (2 ** k, 1)) for k in range(last + 1)])

    @property
    def last_level(self):
        return self.first_level + len(self.values) - 1

    def levels(self):
        return range(self.first_level, self.last_level + 1)

    def at(self, k):
        if not self.first_level <= k <= self.last_level:
            raise TreeError(f"Process is defined on levels {self.first_level}..{self.last_level}, not {k}")
        return self.values[k - self.first_level]

    def node(self, k, j):
        return self.at(k)[j]

    def copy(self):
        return TreeProcess(self.dim, [v.copy() for v in self.values], self.first_level)

    def along(self, tree, leaves):
        """Values read along leaf paths. Shape (len(leaves), levels, d)."""
        nodes = tree.ancestors(leaves)
        return np.stack([self.at(k)[nodes[:, k]] for k in self.levels()], axis=1)

    def max_abs_diff(self, other):
        return max(float(np.abs(a - b).max()) for a, b in zip(self.values, other.values))


def build(n, T):
    """Scenario tree with n steps over [0, T]."""
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        raise TreeError(f"Depth must be an integer, got {n!r}")
    if not 1 <= n <= MAX_DEPTH:
        raise TreeError(f"Depth {n} outside [1, {MAX_DEPTH}]")
    if not T > 0:
        raise TreeError("Horizon T must be positive")
    tree = ScenarioTree(int(n), float(T))
    logger.debug("Built tree depth=%d dt=%g nodes=%d", tree.depth, tree.dt, tree.node_count)
    return tree


def level_mean(values):
    """Mean over the nodes of one level (uniform node probabilities), summed exactly."""
    values = np.asarray(values, dtype=float)
    return np.array([math.fsum(column) for column in values.T]) / len(values)


def expectation(tree, proc, k):
    """Σ_j 2^-k value(k, j), summed exactly per component."""
    values = proc.at(k)
    if len(values) != tree.level_size(k):
        raise TreeError(f"Process has {len(values)} nodes at level {k}, tree has {tree.level_size(k)}")
    return level_mean(values)


def level_means(tree, proc):
    """expectation at every defined level, stacked. Shape (levels, d)."""
    return np.stack([expectation(tree, proc, k) for k in proc.levels()])


def conditional_expectation(tree, proc, k, j):
    """E[proc_{k+1} | node (k, j)]."""
    (_, up), (_, down) = tree.children(k, j)
    values = proc.at(k + 1)
    return 0.5 * (values[up] + values[down])


def martingale_representation(tree, k, j, xi_up, xi_dn):
    """
    Split the next-level value into its conditional mean and the z with
    ξ = mean + z·ΔW on both branches.
    """
    tree.children(k, j)
    xi_up = np.asarray(xi_up, dtype=float)
    xi_dn = np.asarray(xi_dn, dtype=float)
    return 0.5 * (xi_up + xi_dn), (xi_up - xi_dn) / (2.0 * tree.sqrt_dt)


def split_level(tree, next_values):
    """Vectorized martingale_representation for a whole level: (means, z)."""
    up, down = next_values[0::2], next_values[1::2]
    return 0.5 * (up + down), (up - down) / (2.0 * tree.sqrt_dt)


def conditional_expectation_table(tree, proc):
    """
    table[s][k] = E[proc_s | F_k] for k ≤ s, as (2^k, d) arrays. Level s
    values are grouped by their level-k ancestor and averaged.
    """
    table = {}
    for s in proc.levels():
        values = proc.at(s)
        table[s] = {}
        for k in range(s + 1):
            grouped = values.reshape(2 ** k, 2 ** (s - k), proc.dim)
            table[s][k] = grouped.mean(axis=1)
    return table


def brownian_motion(tree):
    """W_k at every node (d = 1)."""
    values = [np.zeros((1, 1))]
    for k in range(1, tree.depth + 1):
        parents = np.repeat(values[-1], 2, axis=0)
        values.append(parents + tree.increments(k)[:, None])
    return TreeProcess(1, values)


def dump_csv(tree, processes, path, stamp=None):
    """Debug dump: one row per (process, level, path) with value_0..value_{d-1}."""
    rows = []
    for name, proc in processes.items():
        for k in proc.levels():
            for j, value in enumerate(proc.at(k)):
                row = {"process": name, "level": k, "t": k * tree.dt, "path": j}
                row.update({f"value_{i}": float(v) for i, v in enumerate(value)})
                rows.append(row)
    return write_csv(rows, path, stamp=stamp)
