"""Historical episodes: random-agent collection, storage and training-set prep."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .env import AppSpec, GuiSimulator, Objective
from .featurize import GraphFeatures, NodeNotInState, Vocabulary, action_indices, vectorize_state
from .uitree import (
    UIAction, UITree, enumerate_actions, filter_process, format_identifier,
    tree_from_document, tree_to_document,
)

log = logging.getLogger(__name__)

EPISODE_FORMAT = "guirl-episodes/1"


class CollectionBudgetExceeded(RuntimeError):
    pass


class ObjectiveNotMet(ValueError):
    pass


class NoQualifyingEpisodes(ValueError):
    pass


class TooFewEpisodes(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    state: UITree
    action: UIAction
    reward: float
    next_state: UITree
    done: bool
    events: tuple[str, ...] = ()


@dataclass
class Episode:
    transitions: list[Transition]
    app: str = ""
    seed: int = 0
    policy: str = "random"

    def __len__(self):
        return len(self.transitions)

    @property
    def fired_events(self) -> list[tuple[int, str]]:
        """(step index, event name) for every event, in order."""
        return [(i, e) for i, t in enumerate(self.transitions) for e in t.events]

    def is_chain_consistent(self) -> bool:
        return all(a.next_state.state_hash == b.state.state_hash
                   for a, b in zip(self.transitions, self.transitions[1:]))


class EpisodeStore:
    """Append-only, insertion-ordered collection of episodes."""

    def __init__(self, episodes: Iterable[Episode] = (), app: str = "", seed: int = 0,
                 policy: str = "random"):
        self._episodes: list[Episode] = list(episodes)
        self.app = app
        self.seed = seed
        self.policy = policy

    def append(self, episode: Episode) -> None:
        self._episodes.append(episode)

    def extend(self, episodes: Iterable[Episode]) -> None:
        for ep in episodes:
            self.append(ep)

    def __len__(self):
        return len(self._episodes)

    def __iter__(self) -> Iterator[Episode]:
        return iter(self._episodes)

    def __getitem__(self, i):
        return self._episodes[i]

    def subset(self, indices: Sequence[int]) -> "EpisodeStore":
        return EpisodeStore([self._episodes[i] for i in indices], self.app, self.seed, self.policy)

    @property
    def mean_length(self) -> float:
        return float(np.mean([len(ep) for ep in self._episodes])) if self._episodes else 0.0

    # -------------------------------------------------------------- file I/O
    # First line is a header; each further line is one episode. States are
    # stored once per episode as a list of tree documents referenced by
    # position, which keeps chain consistency by construction.

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {"format": EPISODE_FORMAT, "app": self.app, "seed": self.seed,
                      "policy": self.policy, "episodes": len(self)}
            fh.write(json.dumps(header) + "\n")
            for ep in self._episodes:
                fh.write(json.dumps(_episode_to_dict(ep), separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path) -> "EpisodeStore":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != EPISODE_FORMAT:
                raise ValueError(f"{path}: not an episode file (format={header.get('format')!r})")
            store = cls(app=header.get("app", ""), seed=header.get("seed", 0),
                        policy=header.get("policy", "random"))
            for line in fh:
                if line.strip():
                    store.append(_episode_from_dict(json.loads(line)))
        return store


def _episode_to_dict(ep: Episode) -> dict:
    states = [t.state for t in ep.transitions]
    if ep.transitions:
        states.append(ep.transitions[-1].next_state)
    # deduplicate repeated screens within the episode
    table, refs = [], []
    seen: dict[int, int] = {}
    for s in states:
        h = s.state_hash
        if h not in seen:
            seen[h] = len(table)
            table.append(tree_to_document(s))
        refs.append(seen[h])
    steps = [[format_identifier(t.action.node_identifier), t.action.action_type, t.reward,
              t.done, list(t.events)] for t in ep.transitions]
    return {"app": ep.app, "seed": ep.seed, "policy": ep.policy,
            "events": [[i, e] for i, e in ep.fired_events],
            "states": table, "path": refs, "steps": steps}


def _episode_from_dict(d: dict) -> Episode:
    table = [tree_from_document(doc) for doc in d["states"]]
    path = [table[i] for i in d["path"]]
    transitions = [
        Transition(path[k], UIAction(int(ident, 16), atype), float(r), path[k + 1], bool(done), tuple(ev))
        for k, (ident, atype, r, done, ev) in enumerate(d["steps"])
    ]
    return Episode(transitions, d.get("app", ""), d.get("seed", 0), d.get("policy", "random"))


# ------------------------------------------------------------------ operations

def run_random_episode(sim: GuiSimulator, rng: random.Random, max_len: int, seed: int = 0) -> Episode:
    state = sim.reset(seed)
    transitions = []
    for _ in range(max_len):
        actions = enumerate_actions(state)
        action = actions[rng.randrange(len(actions))]
        res = sim.step(action)
        transitions.append(Transition(state, action, res.reward, res.next_state, res.done,
                                      tuple(res.info.get("events", ()))))
        state = res.next_state
        if res.done:
            break
    return Episode(transitions, app=sim.base_spec.name, seed=seed, policy="random")


def collect_random_episodes(spec: AppSpec, objective: Objective, count: int, max_len: int,
                            seed: int, max_attempts: Optional[int] = None,
                            exclude_events: Sequence[str] = ()) -> EpisodeStore:
    """Uniform-random episodes that reach ``objective`` within ``max_len`` steps.

    Unsuccessful attempts, and episodes firing any of ``exclude_events``,
    are discarded. Raises ``CollectionBudgetExceeded``
    after ``max_attempts`` tries (default ``1000 * count``).
    """
    if count < 1 or max_len < 1:
        raise ValueError("count and max_len must be positive")
    max_attempts = 1000 * count if max_attempts is None else max_attempts
    rng = random.Random(seed)
    sim = GuiSimulator(spec, objective)
    store = EpisodeStore(app=spec.name, seed=seed, policy="random")
    attempts = 0
    while len(store) < count:
        if attempts >= max_attempts:
            raise CollectionBudgetExceeded(
                f"only {len(store)}/{count} qualifying episodes after {attempts} attempts")
        ep = run_random_episode(sim, rng, max_len, seed=attempts)
        attempts += 1
        if episode_meets_objective(ep, objective) and not any(
                e in exclude_events for _, e in ep.fired_events):
            store.append(ep)
    log.info("collected %d episodes in %d attempts (mean length %.1f)",
             count, attempts, store.mean_length)
    return store


def collect_task_corpus(spec: AppSpec, objectives: Sequence[Objective], count: int, max_len: int,
                        seed: int, exclusive: bool = False) -> EpisodeStore:
    """``count`` qualifying episodes per objective, merged into one store.

    Objective ``k`` is collected with seed ``seed + k``. Random exploration
    fires other tasks' events incidentally, which skews a merged corpus
    towards whichever task is easier to stumble on; ``exclusive`` drops such
    episodes so every objective gets exactly ``count`` examples.
    """
    names = [o.event_name for o in objectives]
    store = EpisodeStore(app=spec.name, seed=seed, policy="random")
    for k, obj in enumerate(objectives):
        others = [n for n in names if n != obj.event_name] if exclusive else []
        store.extend(collect_random_episodes(spec, obj, count, max_len, seed + k, exclude_events=others))
    return store


def episode_meets_objective(episode: Episode, objective: Objective) -> bool:
    hits = sum(1 for _, e in episode.fired_events if e == objective.event_name)
    return hits >= objective.target_count


def crop_episode(episode: Episode, objective: Objective) -> Episode:
    """Prefix ending where the objective's ``target_count``-th event fires."""
    hits = 0
    for i, t in enumerate(episode.transitions):
        hits += t.events.count(objective.event_name)
        if hits >= objective.target_count:
            kept = episode.transitions[:i]
            last = episode.transitions[i]
            kept.append(Transition(last.state, last.action, last.reward, last.next_state, True, last.events))
            return Episode(kept, episode.app, episode.seed, episode.policy)
    raise ObjectiveNotMet(f"episode never fires {objective.event_name!r} "
                          f"{objective.target_count} time(s)")


@dataclass
class TransitionBatch:
    """Vectorized transitions over a shared table of unique graphs.

    ``graphs`` holds each distinct (process-filtered) state once; per
    transition we keep graph indices plus the action's node and type index.
    ``next_actions[g]`` lists the (node, type) pairs available in graph ``g``.
    """

    graphs: list[GraphFeatures]
    next_actions: list[np.ndarray]
    state: np.ndarray
    node: np.ndarray
    kind: np.ndarray
    reward: np.ndarray
    next_state: np.ndarray
    done: np.ndarray
    objective: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.state)

    def take(self, idx) -> "TransitionBatch":
        idx = np.asarray(idx)
        return TransitionBatch(self.graphs, self.next_actions, self.state[idx], self.node[idx],
                               self.kind[idx], self.reward[idx], self.next_state[idx],
                               self.done[idx], None if self.objective is None else self.objective[idx])


def available_action_indices(tree: UITree, action_types: Sequence[str]) -> np.ndarray:
    """(node, type) index pairs of every enumerated action in ``tree``."""
    pairs = [action_indices(a, tree, action_types) for a in enumerate_actions(tree, action_types)]
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


class GraphTable:
    """Assigns stable indices to distinct filtered states and caches features."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self.index: dict[int, int] = {}
        self.graphs: list[GraphFeatures] = []
        self.actions: list[np.ndarray] = []

    def add(self, tree: UITree) -> int:
        h = tree.state_hash
        if h not in self.index:
            self.index[h] = len(self.graphs)
            self.graphs.append(vectorize_state(tree, self.vocab))
            self.actions.append(available_action_indices(tree, self.vocab.action_types))
        return self.index[h]


def build_training_set(store: Iterable[Episode], objectives: Sequence[Objective], process: str,
                       vocab: Vocabulary) -> TransitionBatch:
    """Filter, crop, process-filter and vectorize episodes for each objective.

    Rewards are ``1 / target_count`` on transitions that fire the objective's
    event and 0 elsewhere. An episode qualifying for several objectives is
    used once per objective. Transitions whose clicked node lies outside
    ``process`` cannot be encoded and are skipped.
    """
    if isinstance(objectives, Objective):
        objectives = [objectives]
    episodes = list(store)
    table = GraphTable(vocab)
    cols = {k: [] for k in ("state", "node", "kind", "reward", "next_state", "done", "objective")}
    skipped = 0
    # episodes share state objects between consecutive transitions
    views: dict[int, UITree] = {}

    def view(tree: UITree) -> UITree:
        if id(tree) not in views:
            views[id(tree)] = filter_process(tree, process)
        return views[id(tree)]

    for k, obj in enumerate(objectives):
        qualifying = [ep for ep in episodes if episode_meets_objective(ep, obj)]
        if not qualifying:
            raise NoQualifyingEpisodes(f"no episode achieves {obj.event_name!r}")
        for ep in qualifying:
            for t in crop_episode(ep, obj).transitions:
                s = view(t.state)
                try:
                    node, kind = action_indices(t.action, s, vocab.action_types)
                except NodeNotInState:
                    skipped += 1
                    continue
                fired = t.events.count(obj.event_name)
                cols["state"].append(table.add(s))
                cols["next_state"].append(table.add(view(t.next_state)))
                cols["node"].append(node)
                cols["kind"].append(kind)
                cols["reward"].append(fired * obj.reward_scale)
                cols["done"].append(t.done)
                cols["objective"].append(k)
    if skipped:
        log.debug("skipped %d transitions acting outside process %r", skipped, process)
    return TransitionBatch(
        graphs=table.graphs, next_actions=table.actions,
        state=np.asarray(cols["state"], dtype=np.int64),
        node=np.asarray(cols["node"], dtype=np.int64),
        kind=np.asarray(cols["kind"], dtype=np.int64),
        reward=np.asarray(cols["reward"], dtype=np.float64),
        next_state=np.asarray(cols["next_state"], dtype=np.int64),
        done=np.asarray(cols["done"], dtype=bool),
        objective=np.asarray(cols["objective"], dtype=np.int64),
    )


def k_fold_split(store: EpisodeStore, k: int, seed: int) -> list[tuple[EpisodeStore, EpisodeStore]]:
    """Episode-level k-fold partition; pair ``i`` holds out fold ``i``."""
    if k < 2:
        raise TooFewEpisodes("k-fold needs k >= 2 so that every held-out fold is non-empty")
    if len(store) < k:
        raise TooFewEpisodes(f"{len(store)} episodes cannot fill {k} folds")
    order = list(range(len(store)))
    random.Random(seed).shuffle(order)
    folds = [sorted(order[i::k]) for i in range(k)]
    pairs = []
    for i in range(k):
        train = sorted(j for f, fold in enumerate(folds) if f != i for j in fold)
        pairs.append((store.subset(train), store.subset(folds[i])))
    return pairs


def cropped_transitions(store: Iterable[Episode], objectives: Sequence[Objective]) -> list[Transition]:
    """Raw (unvectorized) cropped transitions with per-objective rewards."""
    if isinstance(objectives, Objective):
        objectives = [objectives]
    episodes = list(store)
    out = []
    for obj in objectives:
        for ep in episodes:
            if not episode_meets_objective(ep, obj):
                continue
            for t in crop_episode(ep, obj).transitions:
                r = t.events.count(obj.event_name) * obj.reward_scale
                out.append(Transition(t.state, t.action, r, t.next_state, t.done, t.events))
    return out
