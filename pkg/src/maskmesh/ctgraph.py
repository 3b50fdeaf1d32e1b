"""Deterministic tree-graph environment with sparse terminal reward.

The graph alternates wait and decision states: from the home state, action 0
leads through a wait state into a decision state; each decision state fans
out into `branching` subtrees (actions 1..b), ending after `depth` decisions
in one of b^d leaves. Any action that breaks the pattern (a decision action
in a wait state, or action 0 in a decision state) moves to the fail state and
ends the episode with zero reward. Exactly one leaf per task pays 1.0.

Observations are 144-value (12x12) pseudo-images in [0, 1], a deterministic
hash of (observation seed, node): half of each image is a pattern shared by
all nodes of the same kind, half is unique to the node. Tasks that share the
observation seed but differ in the goal leaf therefore present identical
observations with different optimal policies (interfering tasks).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from maskmesh import rng
from maskmesh.errors import ConfigurationError, ContractViolation

OBS_DIM = 144


class NodeKind(Enum):
    HOME = 0
    WAIT = 1
    DECISION = 2
    END = 3
    FAIL = 4


@dataclass(frozen=True)
class CTGraphConfig:
    depth: int
    branching: int
    obs_seed: int
    goal_leaf: int
    high_reward: float = 1.0
    fail_reward: float = 0.0

    def __post_init__(self) -> None:
        if self.depth < 1 or self.branching < 2:
            raise ConfigurationError(f"need depth >= 1 and branching >= 2, got d={self.depth} b={self.branching}")
        if not (0 <= self.goal_leaf < self.branching**self.depth):
            raise ConfigurationError(f"goal_leaf {self.goal_leaf} outside [0, b^d)")

    @property
    def n_actions(self) -> int:
        return self.branching + 1

    @property
    def n_leaves(self) -> int:
        return self.branching**self.depth


@dataclass
class Graph:
    kinds: list[NodeKind]
    wait_child: dict[int, int]  # HOME/WAIT node -> next node
    decision_children: dict[int, list[int]]  # DECISION node -> b children
    leaf_index: dict[int, int]  # END node -> leaf number
    home: int
    fail: int

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)


def build_graph(depth: int, branching: int) -> Graph:
    """Construct the alternating wait/decision tree with b^depth leaves."""
    if depth < 1 or branching < 2:
        raise ConfigurationError(f"invalid graph shape d={depth} b={branching}")
    kinds: list[NodeKind] = []
    wait_child: dict[int, int] = {}
    decision_children: dict[int, list[int]] = {}
    leaf_index: dict[int, int] = {}

    def new_node(kind: NodeKind) -> int:
        kinds.append(kind)
        return len(kinds) - 1

    home = new_node(NodeKind.HOME)
    w0 = new_node(NodeKind.WAIT)
    d0 = new_node(NodeKind.DECISION)
    wait_child[home] = w0
    wait_child[w0] = d0

    queue: list[tuple[int, int]] = [(d0, 1)]  # (decision node, depth of that decision)
    n_leaves = 0
    while queue:
        node, d = queue.pop(0)
        children = []
        for _ in range(branching):
            if d == depth:
                leaf = new_node(NodeKind.END)
                leaf_index[leaf] = n_leaves
                n_leaves += 1
                children.append(leaf)
            else:
                w = new_node(NodeKind.WAIT)
                dn = new_node(NodeKind.DECISION)
                wait_child[w] = dn
                queue.append((dn, d + 1))
                children.append(w)
        decision_children[node] = children
    fail = new_node(NodeKind.FAIL)
    return Graph(kinds, wait_child, decision_children, leaf_index, home, fail)


def observation(obs_seed: int, node_id: int, kind: NodeKind) -> np.ndarray:
    """Deterministic pseudo-image for (seed, node); values in [0, 1]."""
    basis = rng.stream(obs_seed, rng.OBSERVATION, kind.value).random(OBS_DIM)
    noise = rng.stream(obs_seed, rng.OBSERVATION, 100 + node_id).random(OBS_DIM)
    return 0.5 * basis + 0.5 * noise


class CTGraphEnv:
    """Single-instance environment; reset() -> obs, step(a) -> (obs, reward, done)."""

    def __init__(self, config: CTGraphConfig):
        self.config = config
        self.graph = build_graph(config.depth, config.branching)
        self.max_episode_steps = 2 * (2 * config.depth + 2)  # safety net, never hit by the graph itself
        self._obs_cache: dict[int, np.ndarray] = {}
        self._node = self.graph.home
        self._steps = 0
        self._done = True

    @property
    def n_actions(self) -> int:
        return self.config.n_actions

    def observe(self, node_id: int) -> np.ndarray:
        cached = self._obs_cache.get(node_id)
        if cached is None:
            cached = observation(self.config.obs_seed, node_id, self.graph.kinds[node_id])
            self._obs_cache[node_id] = cached
        return cached

    def reset(self) -> np.ndarray:
        self._node = self.graph.home
        self._steps = 0
        self._done = False
        return self.observe(self._node)

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._done:
            raise ContractViolation("step() on a finished episode; call reset()")
        if not (0 <= action < self.config.n_actions):
            raise ContractViolation(f"action {action} outside [0, {self.config.n_actions})")
        g = self.graph
        kind = g.kinds[self._node]
        if kind in (NodeKind.HOME, NodeKind.WAIT):
            nxt = g.wait_child[self._node] if action == 0 else g.fail
        else:  # DECISION
            nxt = g.decision_children[self._node][action - 1] if action >= 1 else g.fail
        self._node = nxt
        self._steps += 1

        reward = 0.0
        done = False
        kind = g.kinds[nxt]
        if kind is NodeKind.FAIL:
            reward, done = self.config.fail_reward, True
        elif kind is NodeKind.END:
            done = True
            if g.leaf_index[nxt] == self.config.goal_leaf:
                reward = self.config.high_reward
        elif self._steps >= self.max_episode_steps:
            done = True
        self._done = done
        return self.observe(nxt), reward, done


def optimal_actions(config: CTGraphConfig) -> list[int]:
    """The unique rewarded action sequence for the task's goal leaf."""
    digits = []
    leaf = config.goal_leaf
    for _ in range(config.depth):
        digits.append(leaf % config.branching)
        leaf //= config.branching
    digits.reverse()
    seq = [0, 0]  # home, first wait
    for i, d in enumerate(digits):
        seq.append(d + 1)
        if i < config.depth - 1:
            seq.append(0)
    return seq


def make_task_set(
    depth: int,
    branching: int,
    obs_seeds: list[int],
    goal_leaves: list[int] | None = None,
) -> list[CTGraphConfig]:
    """Cross product of goal leaves x observation seeds, task ids in row-major
    (leaf-major) order. Defaults to all b^depth leaves."""
    if goal_leaves is None:
        goal_leaves = list(range(branching**depth))
    tasks = []
    for leaf in goal_leaves:
        for seed in obs_seeds:
            tasks.append(CTGraphConfig(depth=depth, branching=branching, obs_seed=seed, goal_leaf=leaf))
    return tasks
