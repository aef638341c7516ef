"""Action selection over a state's dynamic action set."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import Transition
from .featurize import Vocabulary, vectorize_state
from .nn import GraphPack, QNetwork
from .uitree import (
    UIAction, UITree, enumerate_actions, filter_process, fnv1a_64, format_identifier,
)


class NoActions(LookupError):
    pass


def softmax(values: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax of ``values / temperature``; ``inf`` gives the uniform distribution."""
    values = np.asarray(values, dtype=np.float64)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if math.isinf(temperature):
        return np.full(values.shape, 1.0 / values.size)
    z = values / temperature
    z = np.exp(z - z.max())
    return z / z.sum()


def sample_categorical(probs: np.ndarray, rng: random.Random) -> int:
    """Inverse-CDF draw; one ``rng.random()`` call per sample."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), len(probs) - 1)


class NetworkScorer:
    """Q-values of every enumerated action, cached per state.

    States are process-filtered before scoring, so actions are enumerated
    over the filtered tree.
    """

    def __init__(self, net: QNetwork, vocab: Vocabulary, process: Optional[str] = None):
        if net.in_dim != vocab.width:
            raise ValueError(f"network expects {net.in_dim} channels, vocabulary gives {vocab.width}")
        self.net = net
        self.vocab = vocab
        self.process = process
        self._cache: dict[int, tuple[list[UIAction], np.ndarray]] = {}

    def __call__(self, state: UITree) -> tuple[list[UIAction], np.ndarray]:
        key = state.state_hash
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        view = filter_process(state, self.process) if self.process else state
        types = self.vocab.action_types
        actions = enumerate_actions(view, types)
        if not actions:
            result = (actions, np.empty(0))
        else:
            g = vectorize_state(view, self.vocab)
            q = self.net.forward(GraphPack(g.x, g.src, g.dst))
            nodes = [view.index_of(a.node_identifier) for a in actions]
            kinds = [types.index(a.action_type) for a in actions]
            result = (actions, q[nodes, kinds])
        self._cache[key] = result
        return result


def argmax_first(values: Sequence[float]) -> int:
    """Index of the maximum; the earliest index wins ties."""
    return int(np.argmax(np.asarray(values)))


def act_greedy(net: QNetwork, state: UITree, vocab: Vocabulary, process: Optional[str] = None,
               scorer: Optional[NetworkScorer] = None) -> UIAction:
    scorer = scorer or NetworkScorer(net, vocab, process)
    actions, q = scorer(state)
    if not actions:
        raise NoActions("state has no actions")
    return actions[argmax_first(q)]


def act_sampler(net: QNetwork, state: UITree, vocab: Vocabulary, temperature: float,
                rng: random.Random, process: Optional[str] = None,
                scorer: Optional[NetworkScorer] = None) -> UIAction:
    scorer = scorer or NetworkScorer(net, vocab, process)
    actions, q = scorer(state)
    if not actions:
        raise NoActions("state has no actions")
    return actions[sample_categorical(softmax(q, temperature), rng)]


def act_random(state: UITree, rng: random.Random, process: Optional[str] = None) -> UIAction:
    """Uniform over all enumerated actions, or over those inside ``process``."""
    actions = enumerate_actions(filter_process(state, process) if process else state)
    if not actions:
        raise NoActions("state has no actions")
    return actions[rng.randrange(len(actions))]


# --------------------------------------------------------------------- Q-hash

def action_hash(action: UIAction) -> int:
    return fnv1a_64(f"{format_identifier(action.node_identifier)}\x1f{action.action_type}".encode())


def state_action_key(state: UITree, action: UIAction) -> int:
    return state.state_hash ^ action_hash(action)


@dataclass
class QHashTable:
    """Tabular Q-values keyed by hashed (state, action) pairs; unseen keys read 0."""

    values: dict[int, float] = field(default_factory=dict)
    learning_rate: float = 0.5
    gamma: float = 0.1
    lookups: set[int] = field(default_factory=set, repr=False)

    def get(self, key: int) -> float:
        self.lookups.add(key)
        return self.values.get(key, 0.0)

    def save(self, path) -> None:
        doc = {"learning_rate": self.learning_rate, "gamma": self.gamma,
               "values": {format_identifier(k): v for k, v in sorted(self.values.items())}}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=0)

    @classmethod
    def load(cls, path) -> "QHashTable":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls({int(k, 16): float(v) for k, v in doc["values"].items()},
                   doc.get("learning_rate", 0.5), doc.get("gamma", 0.1))


def qhash_fit(transitions: Sequence[Transition], gamma: float = 0.1, learning_rate: float = 0.5,
              epochs: int = 50, seed: int = 0) -> QHashTable:
    """Tabular Q-learning over epoch-shuffled passes of raw transitions."""
    transitions = list(transitions)
    if not transitions:
        raise ValueError("empty dataset")
    table = QHashTable(learning_rate=learning_rate, gamma=gamma)
    q = table.values
    next_keys = [None if t.done else [state_action_key(t.next_state, a) for a in enumerate_actions(t.next_state)]
                 for t in transitions]
    keys = [state_action_key(t.state, t.action) for t in transitions]
    rng = random.Random(seed)
    order = list(range(len(transitions)))
    for _ in range(epochs):
        rng.shuffle(order)
        for i in order:
            t = transitions[i]
            boot = 0.0 if not next_keys[i] else max(q.get(k, 0.0) for k in next_keys[i])
            old = q.get(keys[i], 0.0)
            q[keys[i]] = old + learning_rate * (t.reward + gamma * boot - old)
    return table


def qhash_act(table: QHashTable, state: UITree, rng: Optional[random.Random] = None) -> UIAction:
    actions = enumerate_actions(state)
    if not actions:
        raise NoActions("state has no actions")
    return actions[argmax_first([table.get(state_action_key(state, a)) for a in actions])]


# ---------------------------------------------------------------- policy objects

@dataclass
class PolicySpec:
    kind: str = "greedy"
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("greedy", "sampler", "random", "qhash"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "sampler" and not self.temperature > 0:
            raise ValueError("sampler temperature must be positive")


class Policy:
    """Callable ``policy(state) -> UIAction`` with its own rng stream."""

    name = "policy"

    def __init__(self, seed: int = 0):
        self.rng = random.Random(seed)

    def __call__(self, state: UITree) -> UIAction:
        raise NotImplementedError


class RandomPolicy(Policy):
    name = "random"

    def __init__(self, seed: int = 0, process: Optional[str] = None):
        super().__init__(seed)
        self.process = process

    def __call__(self, state):
        return act_random(state, self.rng, self.process)


class GreedyPolicy(Policy):
    name = "greedy"

    def __init__(self, net: QNetwork, vocab: Vocabulary, process: Optional[str] = None, seed: int = 0):
        super().__init__(seed)
        self.scorer = NetworkScorer(net, vocab, process)

    def __call__(self, state):
        actions, q = self.scorer(state)
        if not actions:
            raise NoActions("state has no actions")
        return actions[argmax_first(q)]


class SamplerPolicy(Policy):
    name = "sampler"

    def __init__(self, net: QNetwork, vocab: Vocabulary, temperature: float,
                 process: Optional[str] = None, seed: int = 0):
        super().__init__(seed)
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.temperature = temperature
        self.scorer = NetworkScorer(net, vocab, process)
        self._probs: dict[int, np.ndarray] = {}

    def __call__(self, state):
        actions, q = self.scorer(state)
        if not actions:
            raise NoActions("state has no actions")
        probs = self._probs.get(state.state_hash)
        if probs is None:
            probs = self._probs[state.state_hash] = np.cumsum(softmax(q, self.temperature))
        u = self.rng.random() * probs[-1]
        return actions[min(int(np.searchsorted(probs, u, side="right")), len(actions) - 1)]


class QHashPolicy(Policy):
    name = "qhash"

    def __init__(self, table: QHashTable, seed: int = 0):
        super().__init__(seed)
        self.table = table

    def __call__(self, state):
        return qhash_act(self.table, state, self.rng)


def make_policy(spec: PolicySpec, net: Optional[QNetwork] = None, vocab: Optional[Vocabulary] = None,
                process: Optional[str] = None, table: Optional[QHashTable] = None) -> Policy:
    if spec.kind == "random":
        return RandomPolicy(spec.seed)
    if spec.kind == "qhash":
        if table is None:
            raise ValueError("qhash policy needs a table")
        return QHashPolicy(table, spec.seed)
    if net is None or vocab is None:
        raise ValueError(f"{spec.kind} policy needs a network and vocabulary")
    if spec.kind == "greedy":
        return GreedyPolicy(net, vocab, process, spec.seed)
    return SamplerPolicy(net, vocab, spec.temperature, process, spec.seed)
