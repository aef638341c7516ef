"""Policy evaluation in the simulator, analytic oracles and experiment drivers."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .data import EpisodeStore, build_training_set, cropped_transitions, k_fold_split
from .env import AppSpec, GuiSimulator, Objective, perturb
from .featurize import Vocabulary, build_vocabulary
from .nn import QNetwork
from .policy import GreedyPolicy, QHashPolicy, RandomPolicy, SamplerPolicy, qhash_fit
from .qlearn import TrainerConfig, Trainer
from .uitree import UIAction, enumerate_actions

log = logging.getLogger(__name__)


class UnreachableObjective(ValueError):
    pass


# ------------------------------------------------------------------ reports

@dataclass
class EvalReport:
    total_reward: float
    rewards: dict[str, int]
    steps_per_reward: list[int]
    unique_states: int
    steps: int
    seed: int = 0
    fold: Optional[int] = None

    @property
    def reward_count(self) -> int:
        return sum(self.rewards.values())

    @property
    def mean_steps_per_reward(self) -> float:
        return float(np.mean(self.steps_per_reward)) if self.steps_per_reward else math.inf


def evaluate_policy(policy: Callable, spec: AppSpec, objectives, n_steps: int = 1000, seed: int = 0,
                    lenient: bool = False, fold: Optional[int] = None) -> EvalReport:
    """Run ``policy`` for ``n_steps`` simulator steps, resetting whenever done.

    ``steps_per_reward`` holds, for every reward, the steps taken since the
    previous reward or reset. Unique states are distinct canonical tree
    hashes, the initial state included.
    """
    if isinstance(objectives, Objective):
        objectives = [objectives]
    sim = GuiSimulator(spec, objectives, lenient=lenient)
    state = sim.reset(seed)
    seen = {state.state_hash}
    counts = {o.event_name: 0 for o in objectives}
    total = 0.0
    gaps: list[int] = []
    since = 0
    for _ in range(n_steps):
        res = sim.step(policy(state))
        since += 1
        for o in objectives:
            k = res.info["events"].count(o.event_name)
            if k:
                counts[o.event_name] += k
                total += k * o.reward_scale
        if res.reward > 0:
            gaps.append(since)
            since = 0
        state = res.next_state
        seen.add(state.state_hash)
        if res.done:
            state = sim.reset(seed)
            seen.add(state.state_hash)
            since = 0
    return EvalReport(total, counts, gaps, len(seen), n_steps, seed, fold)


# ------------------------------------------------------------------ oracles

def _screen_graph(spec: AppSpec, event_name: str):
    spec = perturb(spec)
    screens = sorted(spec.screens)
    index = {s: i for i, s in enumerate(screens)}
    n = len(screens)
    P = np.zeros((n, n))
    absorb = np.zeros(n)
    for s in screens:
        actions = enumerate_actions(spec.screens[s])
        k = len(actions)
        for a in actions:
            nxt, ev = spec.outcome(s, a)
            if ev == event_name:
                absorb[index[s]] += 1.0 / k
            else:
                P[index[s], index[nxt]] += 1.0 / k
    return spec, screens, index, P, absorb


def _check_reachable(screens, index, P, absorb, start: int, event_name: str):
    """Every screen reachable from ``start`` must be able to fire the event."""
    n = len(screens)
    can_finish = absorb > 0
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if not can_finish[i] and np.any(P[i][can_finish] > 0):
                can_finish[i] = True
                changed = True
    reach, queue = {start}, deque([start])
    while queue:
        i = queue.popleft()
        for j in np.nonzero(P[i])[0]:
            if j not in reach:
                reach.add(int(j))
                queue.append(int(j))
    trapped = [screens[i] for i in sorted(reach) if not can_finish[i]]
    if trapped:
        raise UnreachableObjective(f"{event_name!r} cannot be reached from {trapped}")
    return sorted(reach)


def hitting_time_moments(spec: AppSpec, objective: Objective) -> tuple[float, float]:
    """Mean and standard deviation of the random agent's steps to the event.

    Screens are Markov-chain states; under the uniform policy each enumerated
    action is equally likely and actions without a transition are
    self-loops. With ``P`` the transient block, the first two moments
    solve ``(I - P) t = 1`` and ``(I - P) s = 1 + 2 P t``.
    """
    if objective.target_count != 1:
        raise ValueError("hitting-time oracle supports target_count == 1")
    spec, screens, index, P, absorb = _screen_graph(spec, objective.event_name)
    start = index[spec.initial_screen]
    if not absorb.any():
        raise UnreachableObjective(f"no action fires {objective.event_name!r}")
    reach = _check_reachable(screens, index, P, absorb, start, objective.event_name)
    sub = np.ix_(reach, reach)
    A = np.eye(len(reach)) - P[sub]
    t = np.linalg.solve(A, np.ones(len(reach)))
    s = np.linalg.solve(A, 1.0 + 2.0 * P[sub] @ t)
    k = reach.index(start)
    return float(t[k]), float(math.sqrt(max(s[k] - t[k] ** 2, 0.0)))


def expected_hitting_time(spec: AppSpec, objective: Objective) -> float:
    return hitting_time_moments(spec, objective)[0]


def monte_carlo_hitting_times(spec: AppSpec, objective: Objective, episodes: int, seed: int = 0,
                              max_steps: int = 1_000_000) -> np.ndarray:
    """Steps the uniform-random agent needs to fire the event, per episode."""
    rng = random.Random(seed)
    policy = lambda s: (lambda acts: acts[rng.randrange(len(acts))])(enumerate_actions(s))
    sim = GuiSimulator(spec, objective, lenient=True)
    out = np.empty(episodes, dtype=np.int64)
    for e in range(episodes):
        state = sim.reset(seed)
        for t in range(1, max_steps + 1):
            res = sim.step(policy(state))
            state = res.next_state
            if res.done:
                break
        out[e] = t
    return out


def value_iteration(spec: AppSpec, objective: Objective, gamma: float = 0.1,
                    tol: float = 1e-12) -> dict[str, tuple[list[UIAction], np.ndarray]]:
    """Exact action values on the enumerated screen MDP.

    Firing the objective's event pays ``1 / target_count`` and is absorbing
    (only ``target_count == 1`` is supported).
    """
    if objective.target_count != 1:
        raise ValueError("value iteration supports target_count == 1")
    spec = perturb(spec)
    table = {}
    for s, tree in spec.screens.items():
        acts = enumerate_actions(tree)
        nxt, rew = [], []
        for a in acts:
            n, ev = spec.outcome(s, a)
            nxt.append(None if ev == objective.event_name else n)
            rew.append(objective.reward_scale if ev == objective.event_name else 0.0)
        table[s] = (acts, nxt, np.asarray(rew))
    V = {s: 0.0 for s in spec.screens}
    while True:
        Q = {s: rew + gamma * np.array([0.0 if n is None else V[n] for n in nxt])
             for s, (acts, nxt, rew) in table.items()}
        newV = {s: float(q.max()) for s, q in Q.items()}
        delta = max(abs(newV[s] - V[s]) for s in V)
        V = newV
        if delta < tol:
            break
    return {s: (table[s][0], Q[s]) for s in spec.screens}


def optimal_path(spec: AppSpec, objective: Objective, gamma: float = 0.1) -> list[str]:
    """Screens visited by the value-iteration greedy policy until the event fires."""
    q = value_iteration(spec, objective, gamma)
    spec = perturb(spec)
    screen, path = spec.initial_screen, []
    while len(path) <= len(spec.screens):
        path.append(screen)
        acts, vals = q[screen]
        a = acts[int(np.argmax(vals))]
        nxt, ev = spec.outcome(screen, a)
        if ev == objective.event_name:
            return path
        screen = nxt
    raise UnreachableObjective("greedy value-iteration policy loops")


def optimal_actions(q: tuple[list[UIAction], np.ndarray], atol: float = 1e-12) -> set[UIAction]:
    acts, vals = q
    best = vals.max()
    return {a for a, v in zip(acts, vals) if v >= best - atol}


# ---------------------------------------------------------------- statistics

def mean_sd(values) -> tuple[float, float]:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    return float(v.mean()), float(v.std(ddof=0))


def spearman(x, y) -> float:
    return float(spearmanr(x, y).statistic)


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if window <= 1 or v.size < window:
        return v
    return np.convolve(v, np.ones(window) / window, mode="valid")


# ------------------------------------------------------------------ CSV

def csv_text(header: Sequence[str], rows: Iterable[Sequence], fingerprint: str = "") -> str:
    """CSV with an optional leading ``# config=<fingerprint>`` comment line."""
    buf = io.StringIO()
    if fingerprint:
        buf.write(f"# config={fingerprint}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_csv(path, header, rows, fingerprint: str = "") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(header, rows, fingerprint))


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# --------------------------------------------------------------- experiments

@dataclass
class TrainedCell:
    """One (fold, seed) training run."""

    fold: int
    seed: int
    net: QNetwork
    vocab: Vocabulary
    losses: list[float]
    curve: list[dict] = field(default_factory=list)

    def greedy(self, process: str) -> GreedyPolicy:
        return GreedyPolicy(self.net, self.vocab, process, self.seed)

    def sampler(self, temperature: float, process: str) -> SamplerPolicy:
        return SamplerPolicy(self.net, self.vocab, temperature, process, self.seed)


def train_cell(store: EpisodeStore, objectives: Sequence[Objective], spec: AppSpec,
               config: TrainerConfig, fold: int = 0, min_count: int = 2,
               include_automation_id: bool = False, curve_spec: Optional[AppSpec] = None,
               curve_steps: int = 1000) -> TrainedCell:
    """Vocabulary, training set and network for one training store.

    With ``curve_spec``, the greedy policy is evaluated there every
    ``config.eval_every`` steps (the learning curve).
    """
    vocab = build_vocabulary(store, min_count=min_count, include_automation_id=include_automation_id,
                             process=spec.process)
    dataset = build_training_set(store, objectives, spec.process, vocab)
    trainer = Trainer(dataset, config, len(vocab.action_types))

    def hook(step, net):
        rep = evaluate_policy(GreedyPolicy(net, vocab, spec.process, config.seed), curve_spec,
                              objectives, curve_steps, seed=config.seed)
        return {"eval_reward": rep.total_reward, "eval_unique_states": rep.unique_states}

    res = trainer.train(hook if curve_spec is not None else None)
    return TrainedCell(fold, config.seed, res.net, vocab, res.losses, res.evals)


@dataclass
class CrossValidation:
    cells: list[TrainedCell]
    train_reports: list[EvalReport]
    eval_reports: list[EvalReport]
    objectives: list[Objective]
    qhash_train: list[EvalReport] = field(default_factory=list)
    qhash_eval: list[EvalReport] = field(default_factory=list)
    qhash_tables: list = field(default_factory=list)

    def learning_curve(self) -> list[tuple[int, float, float]]:
        """(training step, mean, sd) of the evaluation reward across cells."""
        steps = [e["step"] for e in self.cells[0].curve]
        rows = []
        for k, step in enumerate(steps):
            m, sd = mean_sd(c.curve[k]["eval_reward"] for c in self.cells)
            rows.append((step, m, sd))
        return rows

    @staticmethod
    def steps_summary(reports: Sequence[EvalReport]) -> tuple[float, float]:
        gaps = [g for r in reports for g in r.steps_per_reward]
        if not gaps:
            return math.inf, math.nan
        return mean_sd(gaps)


def _cross_validation_cell(args) -> tuple:
    (train_store, objectives, spec, eval_spec, cfg, fold, n_steps, min_count,
     include_automation_id, learning_curve, qhash) = args
    seed = cfg.seed
    cell = train_cell(train_store, objectives, spec, cfg, fold, min_count, include_automation_id,
                      curve_spec=eval_spec if learning_curve else None, curve_steps=n_steps)
    train_rep = evaluate_policy(cell.greedy(spec.process), spec, objectives, n_steps, seed, fold=fold)
    eval_rep = evaluate_policy(cell.greedy(spec.process), eval_spec, objectives, n_steps, seed, fold=fold)
    qh = None
    if qhash:
        table = qhash_fit(cropped_transitions(train_store, objectives), gamma=cfg.gamma, seed=seed)
        qh_train = evaluate_policy(QHashPolicy(table, seed), spec, objectives, n_steps, seed, fold=fold)
        table.lookups.clear()  # keep only the evaluation-simulator lookups
        qh_eval = evaluate_policy(QHashPolicy(table, seed), eval_spec, objectives, n_steps, seed, fold=fold)
        qh = (qh_train, qh_eval, table)
    log.info("fold %d seed %d: train %.1f eval %.1f", fold, seed, train_rep.total_reward, eval_rep.total_reward)
    return cell, train_rep, eval_rep, qh


def cross_validate(store: EpisodeStore, objectives: Sequence[Objective], spec: AppSpec,
                   eval_spec: Optional[AppSpec], config: TrainerConfig, k: int = 5,
                   seeds: Sequence[int] = (0, 1, 2, 3), n_steps: int = 1000, min_count: int = 2,
                   include_automation_id: bool = False, split_seed: int = 0,
                   learning_curve: bool = False, qhash: bool = False, jobs: int = 1) -> CrossValidation:
    """Train one network per (fold, seed) and evaluate it greedily.

    ``spec`` is the training simulator; ``eval_spec`` (typically the
    perturbed variant) is the held-out evaluation simulator. Cells are
    independent and seeded, so ``jobs > 1`` runs them in worker processes
    without changing any result.
    """
    objectives = list(objectives)
    eval_spec = eval_spec or spec
    tasks = [(train_store, objectives, spec, eval_spec, TrainerConfig(**{**config.to_dict(), "seed": seed}),
              fold, n_steps, min_count, include_automation_id, learning_curve, qhash)
             for fold, (train_store, _held_out) in enumerate(k_fold_split(store, k, split_seed))
             for seed in seeds]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cross_validation_cell, tasks))
    else:
        results = [_cross_validation_cell(t) for t in tasks]
    cv = CrossValidation([r[0] for r in results], [r[1] for r in results], [r[2] for r in results], objectives)
    if qhash:
        cv.qhash_train = [r[3][0] for r in results]
        cv.qhash_eval = [r[3][1] for r in results]
        cv.qhash_tables = [r[3][2] for r in results]
    return cv


def random_baseline(spec: AppSpec, objectives, n_steps: int = 1000,
                    seeds: Sequence[int] = tuple(range(20)), process: Optional[str] = None) -> list[EvalReport]:
    """Uniform-random agent, one report per seed.

    With ``process`` the agent draws only from actions inside that process,
    which is the infinite-temperature limit of the sampler.
    """
    return [evaluate_policy(RandomPolicy(s, process), spec, objectives, n_steps, s, lenient=True)
            for s in seeds]


@dataclass
class SweepRow:
    temperature: float
    reward_mean: float
    reward_sd: float
    unique_mean: float
    unique_sd: float
    per_task: dict[str, tuple[float, float]] = field(default_factory=dict)
    reports: list[EvalReport] = field(default_factory=list, repr=False)


def temperature_sweep(cells: Sequence[TrainedCell], spec: AppSpec, objectives,
                      temperatures: Sequence[float], n_steps: int = 1000) -> list[SweepRow]:
    """Sampler reward and coverage per temperature, across trained cells."""
    if isinstance(objectives, Objective):
        objectives = [objectives]
    rows = []
    for m in temperatures:
        reps = [evaluate_policy(c.sampler(m, spec.process), spec, objectives, n_steps, c.seed, fold=c.fold)
                for c in cells]
        r_m, r_sd = mean_sd(r.total_reward for r in reps)
        u_m, u_sd = mean_sd(r.unique_states for r in reps)
        per_task = {o.event_name: mean_sd(r.rewards[o.event_name] for r in reps) for o in objectives}
        rows.append(SweepRow(m, r_m, r_sd, u_m, u_sd, per_task, reps))
    return rows


def multi_task_eval(cells: Sequence[TrainedCell], spec: AppSpec, objectives: Sequence[Objective],
                    temperatures: Sequence[float], n_steps: int = 1000) -> list[SweepRow]:
    if len(objectives) < 2:
        raise ValueError("multi-task evaluation needs two or more objectives")
    return temperature_sweep(cells, spec, objectives, temperatures, n_steps)


def task_label(event_name: str) -> str:
    labels = {"notifications_panel_opened": "Notification", "add_bluetooth_clicked": "Device",
              "favorite_added": "Favorite"}
    return labels.get(event_name, "".join(w.title() for w in event_name.split("_")))


# ------------------------------------------------------------- CSV artifacts

def write_learning_curve(path, cv: CrossValidation, fingerprint: str = "") -> None:
    """``single_task.csv``: training step, mean evaluation reward, sd."""
    write_csv(path, ("x", "y", "err"), cv.learning_curve(), fingerprint)


def write_random_curve(path, steps: Sequence[int], reports: Sequence[EvalReport], fingerprint: str = "") -> None:
    """Random-agent reference line over the learning-curve steps (columns a, b, std)."""
    m, sd = mean_sd(r.total_reward for r in reports)
    write_csv(path, ("a", "b", "std"), [(x, m, sd) for x in steps], fingerprint)


def write_steps_table(path, rows: Sequence[tuple], fingerprint: str = "") -> None:
    """Steps-to-task table; rows are (agent, train mean, train sd, eval mean, eval sd)."""
    write_csv(path, ("agent", "train_mean", "train_sd", "eval_mean", "eval_sd"), rows, fingerprint)


def steps_table_rows(cv: CrossValidation, random_reports: Sequence[EvalReport] = ()) -> list[tuple]:
    """One row per agent. A missing mean (no rewards at all) is written as ``inf``."""
    rows = [("greedy", *CrossValidation.steps_summary(cv.train_reports),
             *CrossValidation.steps_summary(cv.eval_reports))]
    if cv.qhash_train:
        rows.append(("qhash", *CrossValidation.steps_summary(cv.qhash_train),
                     *CrossValidation.steps_summary(cv.qhash_eval)))
    if random_reports:
        r = CrossValidation.steps_summary(random_reports)
        rows.append(("random", *r, *r))
    return rows


def write_sweep(out_dir, rows: Sequence[SweepRow], random_reports: Sequence[EvalReport] = (),
                fingerprint: str = "") -> list[str]:
    """``temperature.csv`` and ``pages_seen.csv`` plus their random-agent lines."""
    paths = [os.path.join(out_dir, n) for n in
             ("temperature.csv", "pages_seen.csv", "temperaturerandom.csv", "randompagesseen.csv")]
    write_csv(paths[0], ("x", "y", "err"), [(r.temperature, r.reward_mean, r.reward_sd) for r in rows],
              fingerprint)
    write_csv(paths[1], ("x", "y", "std"), [(r.temperature, r.unique_mean, r.unique_sd) for r in rows],
              fingerprint)
    if not random_reports:
        return paths[:2]
    rm, rsd = mean_sd(r.total_reward for r in random_reports)
    um, usd = mean_sd(r.unique_states for r in random_reports)
    write_csv(paths[2], ("a", "b", "std"), [(r.temperature, rm, rsd) for r in rows], fingerprint)
    write_csv(paths[3], ("x", "y", "std"), [(r.temperature, um, usd) for r in rows], fingerprint)
    return paths


def write_multi_task(path, rows: Sequence[SweepRow], objectives: Sequence[Objective],
                     fingerprint: str = "") -> None:
    """``multiplerewards.csv``: temperature, total and per-task mean and sd."""
    header = ["temperature", "TotalMean", "TotalStd"]
    for o in objectives:
        label = task_label(o.event_name)
        header += [f"{label}Mean", f"{label}Std"]
    body = []
    for r in rows:
        line = [r.temperature, r.reward_mean, r.reward_sd]
        for o in objectives:
            line += list(r.per_task[o.event_name])
        body.append(line)
    write_csv(path, header, body, fingerprint)
