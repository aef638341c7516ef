"""Command-line entry point: ``guirl <command> [options]``.

Exit status is 0 on success, 1 when a pipeline fails and 2 for
configuration or usage errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import random
import sys
from typing import Optional, Sequence

import numpy as np

from . import evaluation as ev
from .apps import random_tree
from .config import ConfigError, RunConfig, load_config
from .data import EpisodeStore, collect_random_episodes, collect_task_corpus
from .featurize import Vocabulary, vectorize_state, vocabulary_from_trees
from .nn import GradientReport, GraphPack, QNetwork, gradient_check
from .policy import QHashTable, make_policy
from .uitree import ACTION_TYPES

log = logging.getLogger("guirl")

COMMANDS = ("gen-data", "train", "eval", "sweep", "xval", "oracle", "gradcheck")


# ----------------------------------------------------------------- pipelines

def load_or_collect(cfg: RunConfig) -> EpisodeStore:
    if cfg.data:
        return EpisodeStore.load(cfg.data)
    spec = cfg.app_spec()
    objectives = cfg.objective_list()
    if len(objectives) == 1:
        return collect_random_episodes(spec, objectives[0], cfg.episodes, cfg.max_len, cfg.data_seed)
    return collect_task_corpus(spec, objectives, cfg.episodes, cfg.max_len, cfg.data_seed,
                               exclusive=cfg.exclusive_corpus)


def run_gen_data(cfg: RunConfig, out_file: str) -> str:
    store = load_or_collect(cfg)
    _ensure_parent(out_file)
    store.save(out_file)
    print(f"wrote {len(store)} episodes (mean length {store.mean_length:.1f}) to {out_file}")
    return out_file


def run_train(cfg: RunConfig, out_file: str) -> str:
    """Train one network on the whole store; writes checkpoint and metrics log."""
    store = load_or_collect(cfg)
    spec, objectives = cfg.app_spec(), cfg.objective_list()
    cell = ev.train_cell(store, objectives, spec, cfg.trainer, 0, cfg.min_count, cfg.include_automation_id,
                         curve_spec=cfg.eval_spec(), curve_steps=cfg.eval_steps)
    _ensure_parent(out_file)
    cell.net.save(out_file, cell.vocab.fingerprint,
                  extra={"vocabulary": cell.vocab.to_dict(), "config": cfg.fingerprint,
                         "process": spec.process})
    evals = {e["step"]: e for e in cell.curve}
    rows = []
    for step in range(len(cell.losses) + 1):
        e = evals.get(step, {})
        loss = cell.losses[step - 1] if step else ""
        rows.append((step, loss, e.get("eval_reward", ""), e.get("eval_unique_states", "")))
    metrics = os.path.splitext(out_file)[0] + ".metrics.csv"
    ev.write_csv(metrics, ("step", "loss", "eval_reward", "eval_unique_states"), rows, cfg.fingerprint)
    print(f"final loss {cell.losses[-1] if cell.losses else float('nan'):.6g}; "
          f"checkpoint {out_file}; metrics {metrics}")
    return out_file


def load_checkpoint(path: str) -> tuple[QNetwork, Vocabulary, dict]:
    net, meta = QNetwork.load(path)
    extra = meta.get("extra", {})
    if "vocabulary" not in extra:
        raise ValueError(f"{path} carries no vocabulary")
    vocab = Vocabulary.from_dict(extra["vocabulary"])
    if vocab.fingerprint != meta["vocab_fingerprint"]:
        raise ValueError(f"{path}: vocabulary does not match its recorded fingerprint")
    return net, vocab, extra


def run_eval(cfg: RunConfig) -> str:
    spec, objectives = cfg.eval_spec(), cfg.objective_list()
    pol = cfg.policy
    net = vocab = table = None
    process = cfg.app_spec().process
    if pol.kind in ("greedy", "sampler"):
        if not cfg.checkpoint:
            raise ConfigError("checkpoint", f"{pol.kind} policy needs --checkpoint")
        net, vocab, extra = load_checkpoint(cfg.checkpoint)
        process = extra.get("process", process)
    elif pol.kind == "qhash":
        if not cfg.qtable:
            raise ConfigError("qtable", "qhash policy needs --qtable")
        table = QHashTable.load(cfg.qtable)
    policy = make_policy(pol, net, vocab, process if pol.kind != "random" else None, table)
    report = ev.evaluate_policy(policy, spec, objectives, cfg.eval_steps, pol.seed,
                                lenient=pol.kind == "random")
    path = _out(cfg, "eval.csv")
    header = ["policy", "temperature", "seed", "steps", "total_reward", "mean_steps_per_reward", "unique_states"]
    row = [pol.kind, pol.temperature if pol.kind == "sampler" else "", pol.seed, report.steps,
           report.total_reward, report.mean_steps_per_reward, report.unique_states]
    for o in objectives:
        header.append(o.event_name)
        row.append(report.rewards[o.event_name])
    ev.write_csv(path, header, [row], cfg.fingerprint)
    print(f"{pol.kind}: reward {report.total_reward:g} in {report.steps} steps, "
          f"mean steps/reward {report.mean_steps_per_reward:g}, unique states {report.unique_states}")
    return path


def _cross_validate(cfg: RunConfig, learning_curve: bool, qhash: bool) -> ev.CrossValidation:
    store = load_or_collect(cfg)
    return ev.cross_validate(store, cfg.objective_list(), cfg.app_spec(), cfg.eval_spec(), cfg.trainer,
                             cfg.folds, cfg.seeds, cfg.eval_steps, cfg.min_count, cfg.include_automation_id,
                             cfg.split_seed, learning_curve=learning_curve, qhash=qhash, jobs=cfg.jobs)


def run_xval(cfg: RunConfig) -> list[str]:
    """Learning curve and steps-to-task table over folds x seeds."""
    cv = _cross_validate(cfg, learning_curve=True, qhash=cfg.qhash)
    spec, objectives = cfg.eval_spec(), cfg.objective_list()
    rand = ev.random_baseline(spec, objectives, cfg.eval_steps, range(cfg.random_runs))
    fp = cfg.fingerprint
    paths = [_out(cfg, n) for n in ("single_task.csv", "single_task_random.csv", "steps_table.csv")]
    ev.write_learning_curve(paths[0], cv, fp)
    ev.write_random_curve(paths[1], [r[0] for r in cv.learning_curve()], rand, fp)
    rows = ev.steps_table_rows(cv, rand)
    ev.write_steps_table(paths[2], rows, fp)
    for agent, tm, tsd, em, esd in rows:
        print(f"{agent:>7}: train {tm:.4g} +/- {tsd:.4g}   eval {em:.4g} +/- {esd:.4g} steps per reward")
    return paths


def run_sweep(cfg: RunConfig) -> list[str]:
    """Sampler temperature sweep over cross-validated networks."""
    cv = _cross_validate(cfg, learning_curve=False, qhash=False)
    spec, objectives = cfg.eval_spec(), cfg.objective_list()
    rows = ev.temperature_sweep(cv.cells, spec, objectives, cfg.temperatures, cfg.eval_steps)
    rand = ev.random_baseline(spec, objectives, cfg.eval_steps, range(cfg.random_runs),
                              process=cfg.app_spec().process)
    paths = ev.write_sweep(_out(cfg, ""), rows, rand, cfg.fingerprint)
    if len(objectives) > 1:
        paths.append(_out(cfg, "multiplerewards.csv"))
        ev.write_multi_task(paths[-1], rows, objectives, cfg.fingerprint)
    for r in rows:
        tasks = "  ".join(f"{ev.task_label(k)} {m:.3g}" for k, (m, _) in r.per_task.items())
        print(f"m={r.temperature:<10.4g} reward {r.reward_mean:8.3g} +/- {r.reward_sd:<8.3g} "
              f"unique {r.unique_mean:6.3g} +/- {r.unique_sd:<6.3g} {tasks}")
    return paths


def run_oracle(cfg: RunConfig, episodes: int = 500, seed: int = 0) -> str:
    spec = cfg.app_spec()
    rows = []
    for o in cfg.objective_list():
        mean, sd = ev.hitting_time_moments(spec, o)
        mc = ev.monte_carlo_hitting_times(spec, o, episodes, seed) if episodes else np.zeros(0)
        mc_mean, mc_sd = ev.mean_sd(mc)
        path = ev.optimal_path(spec, o, cfg.trainer.gamma)
        rows.append((o.event_name, mean, sd, mc_mean, mc_sd, episodes, len(path)))
        print(f"{o.event_name}: hitting time {mean:.4f} (sd {sd:.4f}); Monte Carlo {mc_mean:.4f} "
              f"over {episodes} episodes; optimal path {' -> '.join(path)}")
    out = _out(cfg, "oracle.csv")
    ev.write_csv(out, ("event", "hitting_mean", "hitting_sd", "mc_mean", "mc_sd", "mc_episodes",
                       "optimal_steps"), rows, cfg.fingerprint)
    return out


def gradient_check_instance(rng: random.Random, max_nodes: int = 12, max_graphs: int = 3,
                            hidden: int = 10, heads: int = 8) -> tuple:
    """Random (network, packed graphs, rows, kinds, targets) problem."""
    trees = [random_tree(rng, max_nodes) for _ in range(rng.randint(1, max_graphs))]
    vocab = vocabulary_from_trees(trees, min_count=1, action_types=ACTION_TYPES)
    feats = [vectorize_state(t, vocab) for t in trees]
    g = GraphPack.from_graphs(feats)
    net = QNetwork(vocab.width, len(ACTION_TYPES), hidden=hidden, heads=heads, seed=rng.randrange(2 ** 31))
    b = rng.randint(1, 16)
    rows = np.array([rng.randrange(g.n) for _ in range(b)])
    kinds = np.array([rng.randrange(len(ACTION_TYPES)) for _ in range(b)])
    targets = np.array([rng.gauss(0.0, 1.0) for _ in range(b)])
    return net, g, rows, kinds, targets


def run_gradcheck(instances: int = 20, max_nodes: int = 12, seed: int = 0,
                  tolerance: float = 1e-4) -> list[GradientReport]:
    rng = random.Random(seed)
    reports = []
    for i in range(instances):
        net, g, rows, kinds, targets = gradient_check_instance(rng, max_nodes)
        rep = gradient_check(net, g, rows, kinds, targets, tolerance=tolerance, seed=i)
        reports.append(rep)
    return reports


# ----------------------------------------------------------------- plumbing

def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, name)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory (output file for gen-data and train)")
    common.add_argument("--jobs", type=int, help="worker processes for (fold, seed) cells")
    common.add_argument("-v", "--verbose", action="store_true")

    app = argparse.ArgumentParser(add_help=False)
    app.add_argument("--app", help="built-in app name or AppSpec file")
    app.add_argument("--objective", action="append", help="objective event (repeatable)")

    p = argparse.ArgumentParser(prog="guirl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common, app], help="collect random episodes")
    g.add_argument("--episodes", type=int)
    g.add_argument("--max-len", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--exclusive", action="store_true", help="drop episodes firing another objective")

    t = sub.add_parser("train", parents=[common, app], help="train one Q-network")
    t.add_argument("--data")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="training steps")

    e = sub.add_parser("eval", parents=[common, app], help="evaluate a policy")
    e.add_argument("--policy", choices=("greedy", "sampler", "random", "qhash"))
    e.add_argument("--temperature", type=float)
    e.add_argument("--checkpoint")
    e.add_argument("--qtable")
    e.add_argument("--steps", type=int, help="evaluation steps")
    e.add_argument("--seed", type=int)
    e.add_argument("--eval-app", help="evaluation simulator (default: perturbed variant)")

    for name, text in (("sweep", "sampler temperature sweep"), ("xval", "cross-validated training")):
        s = sub.add_parser(name, parents=[common, app], help=text)
        s.add_argument("--data")
        s.add_argument("--folds", type=int)
        s.add_argument("--seeds", type=int, nargs="+")
        s.add_argument("--steps", type=int, help="training steps")
        if name == "sweep":
            s.add_argument("--temperatures", type=float, nargs="+")

    o = sub.add_parser("oracle", parents=[common, app], help="exact random-agent hitting times")
    o.add_argument("--episodes", type=int, default=500, help="Monte Carlo episodes (0 to skip)")
    o.add_argument("--seed", type=int, default=0)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--max-nodes", type=int, default=12)
    gc.add_argument("--seed", type=int, default=0)
    return p


def _overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    trainer: dict = {}
    policy: dict = {}
    get = lambda name: getattr(args, name, None)
    if get("app") is not None:
        o["app"] = args.app
    if get("objective"):
        o["objectives"] = list(args.objective)
    if get("jobs") is not None:
        o["jobs"] = args.jobs
    if args.command not in ("gen-data", "train") and get("out") is not None:
        o["out"] = args.out
    if get("data") is not None:
        o["data"] = args.data
    if args.command == "gen-data":
        for a, k in (("episodes", "episodes"), ("max_len", "max_len"), ("seed", "data_seed")):
            if get(a) is not None:
                o[k] = get(a)
        if args.exclusive:
            o["exclusive_corpus"] = True
    if args.command == "train":
        if get("seed") is not None:
            trainer["seed"] = args.seed
    if args.command in ("train", "sweep", "xval") and get("steps") is not None:
        trainer["total_steps"] = args.steps
    if args.command in ("sweep", "xval"):
        for a in ("folds", "seeds", "temperatures"):
            if get(a) is not None:
                o[a] = get(a)
    if args.command == "eval":
        for a in ("checkpoint", "qtable", "eval_app"):
            if get(a) is not None:
                o[a] = get(a)
        if get("steps") is not None:
            o["eval_steps"] = args.steps
        if get("policy") is not None:
            policy["kind"] = args.policy
        if get("temperature") is not None:
            policy["temperature"] = args.temperature
        if get("seed") is not None:
            policy["seed"] = args.seed
    if trainer:
        o["trainer"] = trainer
    if policy:
        o["policy"] = policy
    return o


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        cmd = args.command
        if cmd == "gen-data":
            run_gen_data(cfg, args.out or os.path.join(cfg.out, "episodes.jsonl"))
        elif cmd == "train":
            run_train(cfg, args.out or os.path.join(cfg.out, "qnet.npz"))
        elif cmd == "eval":
            run_eval(cfg)
        elif cmd == "sweep":
            run_sweep(cfg)
        elif cmd == "xval":
            run_xval(cfg)
        elif cmd == "oracle":
            run_oracle(cfg, args.episodes, args.seed)
        elif cmd == "gradcheck":
            reports = run_gradcheck(args.instances, args.max_nodes, args.seed)
            worst = max(max(r.max_rel_error.values()) for r in reports)
            failed = sum(not r.passed for r in reports)
            print(json.dumps({"instances": len(reports), "failed": failed, "max_rel_error": worst}))
            return 1 if failed else 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pipeline failure
        log.debug("pipeline failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
