"""
N-agent population under the decentralized strategy.

Each agent follows an independent, uniformly drawn leaf path through the
shared scenario tree and reads its control off the solved consistency system
along that path. States are integrated with the true coupling through the
realized state-average. All replications are stacked on a leading axis.
"""

import logging
from dataclasses import dataclass

import numpy as np

from common.errors import UnsupportedError
from solver.scheme import TreeScheme, euler_step

logger = logging.getLogger(__name__)


@dataclass
class PopulationRun:
    N: int
    replications: int
    seed: int
    agent_ids: np.ndarray        # (N,)
    leaves: np.ndarray           # (R, N)
    nodes: np.ndarray            # (R, N, n+1)
    x: np.ndarray                # (R, N, n+1, d)
    u: np.ndarray                # (R, N, n, m)
    x_avg: np.ndarray            # (R, n+1, d)
    deviation: object = None     # TreeProcess played by agent 0, if any
    y: np.ndarray = None         # (R, N, n+1, d), filled by backward evaluation
    y_avg: np.ndarray = None     # (R, n+1, d)


def agent_average(values):
    """Average over the agent axis (axis 1), independent of agent order."""
    return np.sort(values, axis=1).sum(axis=1) / values.shape[1]


def draw_leaves(tree, seed, replications, agent_ids):
    """leaf = SeedSequence([seed, replication, agent]) mod 2^n; order independent."""
    leaves = np.empty((replications, len(agent_ids)), dtype=np.int64)
    for r in range(replications):
        for i, agent in enumerate(agent_ids):
            state = np.random.SeedSequence([int(seed), r, int(agent)]).generate_state(1, dtype=np.uint64)[0]
            leaves[r, i] = int(state % np.uint64(tree.leaf_count))
    return leaves


def simulate_population(model, tree, cc, N, seed, replications=1, agent_ids=None, deviation=None, leaves=None):
    """
    Simulate `replications` independent populations of N agents.

    `deviation` (a tree control on levels 0..n−1) replaces the strategy of
    agent 0. `leaves` reuses previously drawn paths (common random numbers).
    """
    if N < 2:
        raise ValueError(f"Population needs N >= 2 agents, got {N}")
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if not cc.converged:
        raise UnsupportedError("Cannot simulate under a non-converged solution")

    agent_ids = np.arange(N) if agent_ids is None else np.asarray(agent_ids, dtype=np.int64)
    if len(agent_ids) != N:
        raise ValueError("agent_ids must have length N")
    if leaves is None:
        leaves = draw_leaves(tree, seed, replications, agent_ids)
    leaves = np.asarray(leaves, dtype=np.int64)

    n = tree.depth
    nodes = tree.ancestors(leaves)
    signs = tree.increment_signs(leaves)

    u = np.stack([cc.u.at(k)[nodes[..., k]] for k in range(n)], axis=2)
    if deviation is not None:
        u[:, 0] = np.stack([deviation.at(k)[nodes[:, 0, k]] for k in range(n)], axis=1)

    scheme = TreeScheme(model, tree)
    x = np.empty((replications, N, n + 1, model.n))
    x_avg = np.empty((replications, n + 1, model.n))
    x[:, :, 0] = model.x0
    for k in range(n):
        x_avg[:, k] = agent_average(x[:, :, k])
        dw = (signs[..., k] * tree.sqrt_dt)[..., None]
        x[:, :, k + 1] = euler_step(scheme.slices[k], x[:, :, k], u[:, :, k], x_avg[:, None, k], dw, tree.dt)
    x_avg[:, n] = agent_average(x[:, :, n])

    logger.debug("Simulated %d replication(s) of N=%d", replications, N)
    return PopulationRun(
        N=N,
        replications=replications,
        seed=seed,
        agent_ids=agent_ids,
        leaves=leaves,
        nodes=nodes,
        x=x,
        u=u,
        x_avg=x_avg,
        deviation=deviation,
    )
