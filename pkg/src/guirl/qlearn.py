"""Batch DQN: TD targets from a periodically synced target network."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .data import TransitionBatch
from .nn import Adam, GraphPack, QNetwork, loss_and_gradients

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    gamma: float = 0.1
    target_update: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-2
    total_steps: int = 300
    seed: int = 0
    hidden: int = 10
    heads: int = 8
    eval_every: int = 50

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        for name in ("target_update", "batch_size", "hidden", "heads", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def max_next_q(net: QNetwork, dataset: TransitionBatch, graph_ids) -> np.ndarray:
    """max over available actions of ``net``'s Q in each listed graph.

    Graphs without actions get 0 and a warning.
    """
    graph_ids = list(graph_ids)
    pack = GraphPack.from_graphs([dataset.graphs[i] for i in graph_ids])
    q = net.forward(pack)
    out = np.zeros(len(graph_ids))
    for k, gid in enumerate(graph_ids):
        acts = dataset.next_actions[gid]
        if len(acts) == 0:
            log.warning("graph %d has no actions; bootstrap term set to 0", gid)
            continue
        out[k] = q[pack.offsets[k] + acts[:, 0], acts[:, 1]].max()
    return out


def td_targets(batch: TransitionBatch, target_net: QNetwork, gamma: float,
               next_max: Optional[np.ndarray] = None) -> np.ndarray:
    """``r`` at done transitions, ``r + gamma * max_a' Q(s', a'; target)`` otherwise.

    ``next_max`` may carry precomputed per-graph maxima (indexed by graph id).
    """
    if next_max is None:
        ids = np.unique(batch.next_state[~batch.done])
        table = np.zeros(len(batch.graphs))
        if ids.size:
            table[ids] = max_next_q(target_net, batch, ids)
        next_max = table
    boot = np.where(batch.done, 0.0, next_max[batch.next_state])
    return batch.reward + gamma * boot


@dataclass
class TrainResult:
    net: QNetwork
    losses: list[float]
    evals: list[dict] = field(default_factory=list)
    syncs: list[int] = field(default_factory=list)


class Trainer:
    """Holds policy net, target net and optimizer state for one training run."""

    def __init__(self, dataset: TransitionBatch, config: TrainerConfig,
                 n_action_types: int = 1, net: Optional[QNetwork] = None):
        if len(dataset) == 0:
            raise ValueError("empty training set")
        self.dataset = dataset
        self.config = config
        in_dim = dataset.graphs[0].x.shape[1]
        self.net = net if net is not None else QNetwork(
            in_dim, n_action_types, hidden=config.hidden, heads=config.heads, seed=config.seed)
        self.target_net = self.net.copy()
        self.optimizer = Adam(self.net.parameters(), lr=config.learning_rate)
        self.steps = 0
        self.losses: list[float] = []
        self.syncs: list[int] = []
        self.rng = np.random.default_rng(config.seed)
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0
        self._next_max: Optional[np.ndarray] = None

    def _refresh_target_cache(self) -> None:
        ds = self.dataset
        ids = np.unique(ds.next_state[~ds.done])
        table = np.zeros(len(ds.graphs))
        if ids.size:
            table[ids] = max_next_q(self.target_net, ds, ids)
        self._next_max = table

    def sync_target(self) -> None:
        self.target_net = self.net.copy()
        self._next_max = None
        self.syncs.append(self.steps)

    def next_batch(self) -> TransitionBatch:
        """Next mini-batch of an epoch-wise shuffled pass over the data."""
        n = len(self.dataset)
        if self._cursor >= len(self._order):
            self._order = self.rng.permutation(n)
            self._cursor = 0
        idx = self._order[self._cursor:self._cursor + self.config.batch_size]
        self._cursor += len(idx)
        return self.dataset.take(idx)

    def train_step(self, batch: Optional[TransitionBatch] = None) -> float:
        batch = self.next_batch() if batch is None else batch
        if self._next_max is None:
            self._refresh_target_cache()
        targets = td_targets(batch, self.target_net, self.config.gamma, self._next_max)
        ids, local = np.unique(batch.state, return_inverse=True)
        pack = GraphPack.from_graphs([batch.graphs[i] for i in ids])
        rows = pack.offsets[local] + batch.node
        loss = loss_and_gradients(self.net, pack, rows, batch.kind, targets)
        self.optimizer.step()
        self.steps += 1
        self.losses.append(loss)
        if self.steps % self.config.target_update == 0:
            self.sync_target()
        return loss

    def train(self, eval_hook: Optional[Callable[[int, QNetwork], dict]] = None) -> TrainResult:
        evals = []
        cfg = self.config
        if eval_hook is not None:
            evals.append({"step": 0, **eval_hook(0, self.net.copy())})
        while self.steps < cfg.total_steps:
            self.train_step()
            if eval_hook is not None and (self.steps % cfg.eval_every == 0 or self.steps == cfg.total_steps):
                evals.append({"step": self.steps, **eval_hook(self.steps, self.net.copy())})
        return TrainResult(self.net, list(self.losses), evals, list(self.syncs))


def train(dataset: TransitionBatch, config: TrainerConfig, eval_hook=None,
          n_action_types: int = 1) -> TrainResult:
    return Trainer(dataset, config, n_action_types).train(eval_hook)
