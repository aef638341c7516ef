"""Run configuration: JSON file, environment overrides and validation.

Every field has the reference-experiment default, so an empty config file
(or none at all) reproduces the single-task notifications experiment.
Environment variables prefixed ``GUIRL_`` override file values; nested
trainer and policy fields use a double underscore, e.g.
``GUIRL_TRAINER__TOTAL_STEPS=50`` or ``GUIRL_EVAL_STEPS=200``. Override
values are parsed as JSON and fall back to plain strings.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Mapping, Optional

from .apps import BUILTIN_TASKS, NOTIFICATIONS_EVENT, get_app
from .env import AppSpec, Objective
from .policy import PolicySpec
from .qlearn import TrainerConfig

ENV_PREFIX = "GUIRL_"

# half-decade grid from greedy-like to effectively uniform sampling
DEFAULT_TEMPERATURES = [0.01, 0.03162277660168379, 0.1, 0.31622776601683794, 1.0, 3.1622776601683795]


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    app: str = "settings"
    eval_app: Optional[str] = None
    objectives: list = field(default_factory=lambda: [NOTIFICATIONS_EVENT])
    data: Optional[str] = None
    episodes: int = 20
    max_len: int = 100
    data_seed: int = 0
    exclusive_corpus: bool = False
    min_count: int = 2
    include_automation_id: bool = False
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    policy: PolicySpec = field(default_factory=PolicySpec)
    eval_steps: int = 1000
    folds: int = 5
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3])
    split_seed: int = 0
    temperatures: list = field(default_factory=lambda: list(DEFAULT_TEMPERATURES))
    random_runs: int = 20
    qhash: bool = True
    checkpoint: Optional[str] = None
    qtable: Optional[str] = None
    out: str = "out"
    jobs: int = 1

    # ---------------------------------------------------------------- derived

    def objective_list(self) -> list[Objective]:
        out = []
        for o in self.objectives:
            if isinstance(o, str):
                out.append(Objective(o))
            else:
                out.append(Objective(o["event"], int(o.get("target_count", 1))))
        return out

    def app_spec(self) -> AppSpec:
        return load_app(self.app)

    def eval_spec(self) -> AppSpec:
        """Evaluation simulator: ``eval_app``, else the perturbed built-in variant."""
        if self.eval_app:
            return load_app(self.eval_app)
        if not os.path.exists(self.app) and not self.app.endswith("_perturbed"):
            return get_app(self.app + "_perturbed")
        return self.app_spec()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trainer"] = self.trainer.to_dict()
        d["policy"] = asdict(self.policy)
        return d

    @property
    def fingerprint(self) -> str:
        """Hash of every field except output location and parallelism."""
        d = self.to_dict()
        for k in ("out", "jobs"):
            d.pop(k)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    # ------------------------------------------------------------- validation

    def validate(self) -> None:
        for name in ("episodes", "max_len", "eval_steps", "random_runs", "jobs", "min_count"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if not isinstance(self.folds, int) or self.folds < 2:
            raise ConfigError("folds", f"must be an integer >= 2, got {self.folds!r}")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds", "must be a non-empty list of integers")
        if not self.objectives:
            raise ConfigError("objectives", "at least one objective is required")
        try:
            self.objective_list()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("objectives", str(exc)) from exc
        if not self.temperatures or not all(
                isinstance(t, (int, float)) and t > 0 and not math.isnan(t) for t in self.temperatures):
            raise ConfigError("temperatures", "must be a non-empty list of positive numbers")
        for name in ("data", "checkpoint", "qtable"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                raise ConfigError(name, f"file not found: {path}")
        for name in ("app", "eval_app"):
            value = getattr(self, name)
            if value is None:
                continue
            try:
                load_app(value)
            except (KeyError, OSError, ValueError) as exc:
                raise ConfigError(name, str(exc)) from exc


def load_app(name_or_path: str) -> AppSpec:
    """Built-in app name, or path to a saved ``AppSpec`` document."""
    if os.path.exists(name_or_path):
        return AppSpec.load(name_or_path)
    return get_app(name_or_path)


def task_objective(task: str) -> tuple[str, str]:
    """(app, event) of a built-in task name."""
    if task not in BUILTIN_TASKS:
        raise ConfigError("task", f"unknown task {task!r}; choose from {sorted(BUILTIN_TASKS)}")
    return BUILTIN_TASKS[task]


def _build(cls, values: Mapping, prefix: str):
    known = {f.name for f in fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(prefix + key, "unknown key")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix.rstrip(".") or cls.__name__, str(exc)) from exc


def config_from_dict(values: Mapping) -> RunConfig:
    values = dict(values)
    known = {f.name for f in fields(RunConfig)}
    for key in values:
        if key not in known:
            raise ConfigError(key, "unknown key")
    if "trainer" in values:
        values["trainer"] = _build(TrainerConfig, values["trainer"] or {}, "trainer.")
    if "policy" in values:
        values["policy"] = _build(PolicySpec, values["policy"] or {}, "policy.")
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
    cfg.validate()
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def env_overrides(environ: Mapping[str, str] = os.environ) -> dict:
    """Nested override dict from ``GUIRL_*`` variables."""
    out: dict = {}
    for key, raw in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _parse_value(raw)
    return out


def _merge(base: dict, extra: Mapping) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Mapping] = None,
                environ: Mapping[str, str] = os.environ) -> RunConfig:
    """File values, then environment overrides, then explicit ``overrides``."""
    values: dict = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values = json.load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError("config", "top level must be an object")
    values = _merge(values, env_overrides(environ))
    values = _merge(values, overrides or {})
    return config_from_dict(values)
