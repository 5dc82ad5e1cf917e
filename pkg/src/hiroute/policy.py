"""Per-node, per-task expert machinery: joint threshold-destination experts,
action distributions with exploration mixing, and exponential weights.

A joint expert pairs an offload threshold with a destination: it recommends
offloading there when the local confidence falls below the threshold, and
local termination otherwise. Weights over the joint expert grid are the
softmax of negated cumulative estimated losses; each action's probability
aggregates the weights of every expert recommending it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

DEFAULT_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass(frozen=True)
class ExpertGrid:
    """Joint expert space at one node: thresholds x uplink destinations."""

    thresholds: tuple[float, ...]
    destinations: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.thresholds or not self.destinations:
            raise ValueError("expert grid needs thresholds and destinations")
        arr = np.asarray(self.thresholds)
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("thresholds must lie in [0, 1]")
        if np.any(np.diff(arr) <= 0):
            raise ValueError("thresholds must be strictly increasing")

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.thresholds), len(self.destinations))

    @property
    def size(self) -> int:
        return len(self.thresholds) * len(self.destinations)


@dataclass
class ActionDistribution:
    """Raw and exploration-mixed probabilities over {terminate} + uplinks."""

    destinations: tuple[str, ...]
    raw_terminate: float
    raw_offload: np.ndarray
    exploration_rate: float

    def __post_init__(self) -> None:
        n_actions = len(self.destinations) + 1
        floor = self.exploration_rate / n_actions
        keep = 1.0 - self.exploration_rate
        self.mixed_terminate = keep * self.raw_terminate + floor
        self.mixed_offload = keep * self.raw_offload + floor

    def raw(self, action: str | int) -> float:
        if action == 0:
            return self.raw_terminate
        return float(self.raw_offload[self.destinations.index(action)])

    def mixed(self, action: str | int) -> float:
        if action == 0:
            return self.mixed_terminate
        return float(self.mixed_offload[self.destinations.index(action)])

    def sample(self, rng: np.random.Generator) -> str | int:
        """Draw one action from the mixed distribution (0 = terminate)."""
        probs = np.concatenate(([self.mixed_terminate], self.mixed_offload))
        idx = int(rng.choice(len(probs), p=probs / probs.sum()))
        return 0 if idx == 0 else self.destinations[idx - 1]


class _TableEntry:
    __slots__ = ("cum_loss", "weights", "entropy", "dirty")

    def __init__(self, shape: tuple[int, int]) -> None:
        self.cum_loss = np.zeros(shape)
        self.weights = np.full(shape, 1.0 / (shape[0] * shape[1]))
        self.entropy = float(np.log(shape[0] * shape[1]))
        self.dirty = False


class ExpertTable:
    """Weights and cumulative losses for every (node, task) expert grid.

    Weight refreshes happen between slots: a table is recomputed from its
    cumulative losses the first time it is consulted after new losses were
    accumulated, so all decisions within a slot see the slot-start weights.
    """

    def __init__(
        self,
        grids: Mapping[str, ExpertGrid],
        tasks: Sequence[str],
        learning_rate: float,
        exploration_rate: float,
    ) -> None:
        if not 0.0 < exploration_rate < 1.0:
            raise ValueError("exploration rate must lie in (0, 1)")
        if learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        self.grids = dict(grids)
        self.tasks = tuple(tasks)
        self.learning_rate = float(learning_rate)
        self.exploration_rate = float(exploration_rate)
        self._entries: dict[tuple[str, str], _TableEntry] = {
            (node, task): _TableEntry(grid.shape)
            for node, grid in self.grids.items()
            for task in self.tasks
        }
        self._dirty: set[tuple[str, str]] = set()
        self._entropy_sum = float(sum(e.entropy for e in self._entries.values()))

    def entry_keys(self) -> tuple[tuple[str, str], ...]:
        return tuple(self._entries)

    def cum_loss(self, node: str, task: str) -> np.ndarray:
        return self._entries[(node, task)].cum_loss

    def update_weights(self, node: str, task: str) -> np.ndarray:
        """Recompute the softmax of negated cumulative losses (stable form)."""
        entry = self._entries[(node, task)]
        scaled = -self.learning_rate * entry.cum_loss
        scaled -= scaled.max()
        expd = np.exp(scaled)
        entry.weights = expd / expd.sum()
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(entry.weights > 0, np.log(entry.weights), 0.0)
        self._entropy_sum -= entry.entropy
        entry.entropy = float(-(entry.weights * logs).sum())
        self._entropy_sum += entry.entropy
        entry.dirty = False
        self._dirty.discard((node, task))
        return entry.weights

    def weights(self, node: str, task: str) -> np.ndarray:
        entry = self._entries[(node, task)]
        if entry.dirty:
            self.update_weights(node, task)
        return entry.weights

    def action_probs(self, node: str, task: str, z: float) -> ActionDistribution:
        """Aggregate expert weights into action probabilities given confidence z.

        Experts whose threshold exceeds z vote for their destination; all
        others vote for local termination.
        """
        grid = self.grids[node]
        w = self.weights(node, task)
        mask = np.asarray(grid.thresholds) > z
        raw_offload = w[mask, :].sum(axis=0)
        raw_terminate = float(w[~mask, :].sum())
        return ActionDistribution(
            destinations=grid.destinations,
            raw_terminate=raw_terminate,
            raw_offload=raw_offload,
            exploration_rate=self.exploration_rate,
        )

    def accumulate_loss(self, node: str, task: str, per_expert_losses: np.ndarray) -> None:
        """Add one job's estimated losses for every expert of (node, task)."""
        if not np.all(np.isfinite(per_expert_losses)):
            raise ValueError(f"non-finite loss estimate at ({node}, {task})")
        entry = self._entries[(node, task)]
        entry.cum_loss += per_expert_losses
        entry.dirty = True
        self._dirty.add((node, task))

    def refresh_dirty(self) -> None:
        for node, task in list(self._dirty):
            self.update_weights(node, task)

    def mean_entropy(self) -> float:
        """Mean expert-weight entropy over all (node, task) tables."""
        self.refresh_dirty()
        return self._entropy_sum / len(self._entries)


def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> str | int:
    return dist.sample(rng)
