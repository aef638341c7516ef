"""Deterministic GUI simulator with a gym-like ``reset``/``step`` interface.

An :class:`AppSpec` is a finite set of screens (tree templates) connected by
clickable transitions. Instrumentation events are attached to
(screen, node identifier, action type) triples; an objective is reached when
its event has fired ``target_count`` times.
"""

from __future__ import annotations

import json
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional

from .featurize import NodeNotInState
from .uitree import (
    UIAction, UINode, UITree, actionable_indices, enumerate_actions,
    format_identifier, tree_from_document, tree_to_document,
)

Key = tuple[str, int, str]


class SpecError(ValueError):
    pass


class UnknownEvent(ValueError):
    pass


class NotReset(RuntimeError):
    pass


@dataclass(frozen=True)
class Objective:
    event_name: str
    target_count: int = 1

    def __post_init__(self):
        if self.target_count < 1:
            raise ValueError("target_count must be positive")

    @property
    def reward_scale(self) -> float:
        """Per-event reward making one completed task worth 1."""
        return 1.0 / self.target_count


@dataclass
class AppSpec:
    name: str
    screens: dict[str, UITree]
    transitions: dict[Key, str]
    events: dict[Key, str]
    initial_screen: str
    process: str
    perturbation_seed: Optional[int] = None

    def __post_init__(self):
        self.validate()

    @property
    def event_names(self) -> set[str]:
        return set(self.events.values())

    def validate(self) -> None:
        if self.initial_screen not in self.screens:
            raise SpecError(f"initial screen {self.initial_screen!r} missing")
        for (screen, ident, _), target in self.transitions.items():
            if screen not in self.screens or target not in self.screens:
                raise SpecError(f"transition {screen!r} -> {target!r} references an unknown screen")
            if self.screens[screen].index_of(ident) < 0:
                raise SpecError(f"transition source node {format_identifier(ident)} not on {screen!r}")
        for (screen, ident, _), event in self.events.items():
            if screen not in self.screens or self.screens[screen].index_of(ident) < 0:
                raise SpecError(f"event {event!r} attached to a node not on {screen!r}")
        for sid, tree in self.screens.items():
            if not actionable_indices(tree):
                raise SpecError(f"screen {sid!r} has no actionable node")
        unreachable = set(self.screens) - self.reachable_screens()
        if unreachable:
            raise SpecError(f"unreachable screens: {sorted(unreachable)}")

    def reachable_screens(self) -> set[str]:
        seen = {self.initial_screen}
        queue = deque([self.initial_screen])
        out: dict[str, list[str]] = {}
        for (screen, _, _), target in self.transitions.items():
            out.setdefault(screen, []).append(target)
        while queue:
            s = queue.popleft()
            for t in out.get(s, ()):
                if t not in seen:
                    seen.add(t)
                    queue.append(t)
        return seen

    def outcome(self, screen: str, action: UIAction) -> tuple[str, Optional[str]]:
        """(next screen, fired event or None) for ``action`` on ``screen``."""
        key = (screen, action.node_identifier, action.action_type)
        return self.transitions.get(key, screen), self.events.get(key)

    # ------------------------------------------------------------ file format

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "process": self.process,
            "initial_screen": self.initial_screen,
            "perturbation_seed": self.perturbation_seed,
            "screens": {sid: tree_to_document(t) for sid, t in self.screens.items()},
            "transitions": [[s, format_identifier(i), a, t] for (s, i, a), t in self.transitions.items()],
            "events": [[s, format_identifier(i), a, e] for (s, i, a), e in self.events.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AppSpec":
        return cls(
            name=d["name"],
            process=d["process"],
            initial_screen=d["initial_screen"],
            perturbation_seed=d.get("perturbation_seed"),
            screens={sid: tree_from_document(doc) for sid, doc in d["screens"].items()},
            transitions={(s, int(i, 16), a): t for s, i, a, t in d["transitions"]},
            events={(s, int(i, 16), a): e for s, i, a, e in d["events"]},
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "AppSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _random_automation_id(rng: random.Random) -> str:
    return f"{rng.getrandbits(40):010x}"


def perturb(spec: AppSpec, seed: Optional[int] = None) -> AppSpec:
    """Copy of ``spec`` with every AutomationID re-randomized.

    Class names, control types and structure are untouched; transition and
    event keys are re-derived for the new node identifiers. The mapping from
    old to new AutomationID is global, so nodes that were identical stay
    identical. Returns an unperturbed copy when no seed is available.
    """
    seed = spec.perturbation_seed if seed is None else seed
    if seed is None:
        return spec
    rng = random.Random(seed)
    mapping: dict[str, str] = {}

    def rewrite(node: UINode) -> UINode:
        aid = node.automation_id
        if aid is not None:
            if aid not in mapping:
                mapping[aid] = _random_automation_id(rng)
            aid = mapping[aid]
        return UINode(node.class_name, node.control_type, node.process_name, aid,
                      tuple(rewrite(c) for c in node.children))

    screens, id_maps = {}, {}
    for sid in sorted(spec.screens):
        old = spec.screens[sid]
        new = UITree(rewrite(old.root))
        screens[sid] = new
        id_maps[sid] = dict(zip(old.identifiers, new.identifiers))

    def remap(table):
        return {(s, id_maps[s][i], a): v for (s, i, a), v in table.items()}

    return AppSpec(name=spec.name, screens=screens, transitions=remap(spec.transitions),
                   events=remap(spec.events), initial_screen=spec.initial_screen,
                   process=spec.process, perturbation_seed=None)


@dataclass
class StepResult:
    next_state: UITree
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class GuiSimulator:
    """Single-owner simulator instance.

    Parameters
    ----------
    spec : AppSpec
        Application to simulate. Perturbations (``spec.perturbation_seed``)
        are applied once, at construction.
    objectives : Objective or sequence of Objective
        The episode ends as soon as any objective reaches its target count.
    lenient : bool
        If true, actions that do not resolve in the current state are
        no-op steps with reward 0 instead of raising ``NodeNotInState``.
    """

    def __init__(self, spec: AppSpec, objectives, lenient: bool = False):
        if isinstance(objectives, Objective):
            objectives = [objectives]
        self.objectives: list[Objective] = list(objectives)
        if not self.objectives:
            raise ValueError("at least one objective is required")
        for o in self.objectives:
            if o.event_name not in spec.event_names:
                raise UnknownEvent(f"{o.event_name!r} is not an event of app {spec.name!r}")
        self.base_spec = spec
        self.spec = perturb(spec)
        self.lenient = lenient
        self.screen: Optional[str] = None
        self.counts: Counter = Counter()
        self.done = False
        self.seed: Optional[int] = None
        self.steps = 0

    @property
    def state(self) -> UITree:
        if self.screen is None:
            raise NotReset("call reset() first")
        return self.spec.screens[self.screen]

    def reset(self, seed: int = 0) -> UITree:
        self.seed = seed
        self.screen = self.spec.initial_screen
        self.counts = Counter()
        self.done = False
        self.steps = 0
        return self.state

    def available_actions(self) -> list[UIAction]:
        return enumerate_actions(self.state)

    def step(self, action: UIAction) -> StepResult:
        if self.screen is None:
            raise NotReset("call reset() first")
        if self.done:
            raise NotReset("episode finished; call reset()")
        self.steps += 1
        if self.state.index_of(action.node_identifier) < 0:
            if not self.lenient:
                raise NodeNotInState(f"{action!r} is stale on screen {self.screen!r}")
            return StepResult(self.state, 0.0, False, {"screen": self.screen, "events": [], "stale": True})
        nxt, event = self.spec.outcome(self.screen, action)
        self.screen = nxt
        events = [event] if event is not None else []
        reward = 0.0
        for o in self.objectives:
            if event == o.event_name:
                self.counts[o.event_name] += 1
                reward += 1.0
                if self.counts[o.event_name] >= o.target_count:
                    self.done = True
        return StepResult(self.state, reward, self.done, {"screen": nxt, "events": events})


def reset(spec: AppSpec, objective, seed: int = 0, lenient: bool = False) -> tuple[GuiSimulator, UITree]:
    """Construct a simulator and reset it; returns (simulator, initial state)."""
    sim = GuiSimulator(spec, objective, lenient=lenient)
    return sim, sim.reset(seed)


def shortest_path_length(spec: AppSpec, event_name: str) -> int:
    """Fewest actions from the initial screen that fire ``event_name``."""
    spec = perturb(spec)
    dist = {spec.initial_screen: 0}
    queue = deque([spec.initial_screen])
    best = None
    while queue:
        s = queue.popleft()
        for action in enumerate_actions(spec.screens[s]):
            nxt, ev = spec.outcome(s, action)
            if ev == event_name:
                cand = dist[s] + 1
                best = cand if best is None else min(best, cand)
            if nxt not in dist:
                dist[nxt] = dist[s] + 1
                queue.append(nxt)
    if best is None:
        raise UnknownEvent(f"{event_name!r} cannot be reached")
    return best
