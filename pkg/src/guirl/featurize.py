"""Numeric encoding of trees and actions for the Q-network.

Each node becomes the concatenation of four one-hot blocks, one per
UIProperty. Rare and unseen values share index 0 ("Other") of their block.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .uitree import DEFAULT_ACTION_TYPES, UIAction, UITree, filter_process

OTHER = "<other>"
NONE_VALUE = "<none>"
PROPERTIES = ("automation_id", "class_name", "control_type", "process_name")


class EmptyCorpus(ValueError):
    pass


class NodeNotInState(LookupError):
    """The action's node identifier does not resolve in the given tree."""


@dataclass
class Vocabulary:
    """Per-property value lists; index 0 of every list is :data:`OTHER`."""

    values: dict[str, list[str]]
    min_count: int = 2
    action_types: tuple[str, ...] = DEFAULT_ACTION_TYPES
    _lookup: dict[str, dict[str, int]] = field(init=False, repr=False, compare=False)
    _offsets: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.values = {p: list(self.values[p]) for p in PROPERTIES if p in self.values}
        if not self.values:
            raise ValueError("vocabulary needs at least one property")
        for p, vals in self.values.items():
            if not vals or vals[0] != OTHER:
                raise ValueError(f"{p}: index 0 must be {OTHER!r}")
        self.action_types = tuple(self.action_types)
        self._lookup = {p: {v: i for i, v in enumerate(vals)} for p, vals in self.values.items()}
        self._offsets = {}
        off = 0
        for p in self.properties:
            self._offsets[p] = off
            off += len(self.values[p])

    @property
    def properties(self) -> tuple[str, ...]:
        return tuple(self.values)

    @property
    def width(self) -> int:
        """Total one-hot width ``z`` of a node row."""
        return sum(len(v) for v in self.values.values())

    def index(self, prop: str, value) -> int:
        if prop == "automation_id" and value is None:
            value = NONE_VALUE
        return self._lookup[prop].get(value, 0)

    def offset(self, prop: str) -> int:
        return self._offsets[prop]

    def to_dict(self) -> dict:
        return {
            "min_count": self.min_count,
            "z": self.width,
            "action_types": list(self.action_types),
            "properties": {p: self.values[p] for p in self.properties},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        vocab = cls(values=d["properties"], min_count=d["min_count"],
                    action_types=tuple(d.get("action_types", DEFAULT_ACTION_TYPES)))
        if "z" in d and d["z"] != vocab.width:
            raise ValueError(f"stored z={d['z']} disagrees with value lists ({vocab.width})")
        return vocab

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _node_values(tree: UITree, prop: str) -> Iterable[str]:
    for node in tree.nodes:
        value = getattr(node, prop)
        yield NONE_VALUE if value is None else value


def vocabulary_from_trees(trees: Iterable[UITree], min_count: int = 2,
                          include_automation_id: bool = True,
                          action_types: Sequence[str] = DEFAULT_ACTION_TYPES) -> Vocabulary:
    if min_count < 1:
        raise ValueError("min_count must be positive")
    props = PROPERTIES if include_automation_id else PROPERTIES[1:]
    counts = {p: Counter() for p in props}
    n_trees = 0
    for tree in trees:
        n_trees += 1
        for p in props:
            counts[p].update(_node_values(tree, p))
    if n_trees == 0:
        raise EmptyCorpus("no states to build a vocabulary from")
    values = {}
    for p in props:
        kept = [v for v, c in counts[p].items() if c >= min_count and v != OTHER]
        kept.sort(key=lambda v: (-counts[p][v], v))
        values[p] = [OTHER] + kept
    return Vocabulary(values=values, min_count=min_count, action_types=tuple(action_types))


def build_vocabulary(episodes, min_count: int = 2, include_automation_id: bool = True,
                     action_types: Sequence[str] = DEFAULT_ACTION_TYPES,
                     process: str | None = None) -> Vocabulary:
    """Count property values over every state in ``episodes``.

    Each stored state is counted once (the state of every transition plus
    the final next-state of each episode). If ``process`` is given, states
    are filtered to that process first, matching what the network sees.
    """

    def trees():
        for ep in episodes:
            for t in ep.transitions:
                yield t.state if process is None else filter_process(t.state, process)
            if ep.transitions:
                last = ep.transitions[-1].next_state
                yield last if process is None else filter_process(last, process)

    episodes = list(episodes)
    if not episodes or not any(ep.transitions for ep in episodes):
        raise EmptyCorpus("no episodes")
    return vocabulary_from_trees(trees(), min_count, include_automation_id, action_types)


@dataclass(frozen=True)
class GraphFeatures:
    """Node feature matrix plus directed edge arrays for one state."""

    x: np.ndarray          # (n, z), float64 0/1
    src: np.ndarray        # (m,), int64
    dst: np.ndarray        # (m,), int64

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @cached_property
    def x_sparse(self):
        return sparse.csr_matrix(self.x)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))


def vectorize_state(tree: UITree, vocab: Vocabulary) -> GraphFeatures:
    """Row ``i`` encodes the ``i``-th node in pre-order.

    Every tree edge appears in both directions; there are no self loops.
    """
    n = tree.node_count
    x = np.zeros((n, vocab.width))
    for p in vocab.properties:
        off = vocab.offset(p)
        cols = [off + vocab.index(p, getattr(node, p)) for node in tree.nodes]
        x[np.arange(n), cols] = 1.0
    pairs = tree.edges()
    src = np.empty(2 * len(pairs), dtype=np.int64)
    dst = np.empty(2 * len(pairs), dtype=np.int64)
    for k, (parent, child) in enumerate(pairs):
        src[2 * k], dst[2 * k] = parent, child
        src[2 * k + 1], dst[2 * k + 1] = child, parent
    return GraphFeatures(x, src, dst)


@dataclass(frozen=True)
class VectorizedAction:
    type_onehot: np.ndarray
    node_onehot: np.ndarray

    @property
    def type_index(self) -> int:
        return int(np.argmax(self.type_onehot))

    @property
    def node_index(self) -> int:
        return int(np.argmax(self.node_onehot))


def action_indices(action: UIAction, tree: UITree, action_types: Sequence[str]) -> tuple[int, int]:
    """(node pre-order index, action-type index) of ``action`` in ``tree``."""
    node = tree.index_of(action.node_identifier)
    if node < 0:
        raise NodeNotInState(f"{action!r} does not resolve in {tree!r}")
    try:
        kind = list(action_types).index(action.action_type)
    except ValueError:
        raise ValueError(f"action type {action.action_type!r} not registered") from None
    return node, kind


def vectorize_action(action: UIAction, tree: UITree,
                     action_types: Sequence[str] = DEFAULT_ACTION_TYPES) -> VectorizedAction:
    node, kind = action_indices(action, tree, action_types)
    a_e = np.zeros(len(action_types))
    a_e[kind] = 1.0
    a_i = np.zeros(tree.node_count)
    a_i[node] = 1.0
    return VectorizedAction(a_e, a_i)
