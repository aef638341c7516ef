import json
import random

import pytest

from guirl.apps import BLUETOOTH_EVENT, NOTIFICATIONS_EVENT
from guirl.cli import gradient_check_instance, load_checkpoint, main
from guirl.config import ConfigError, RunConfig, config_from_dict, env_overrides, load_config
from guirl.evaluation import read_csv


# ------------------------------------------------------------------ config

def test_defaults_are_valid():
    cfg = load_config(environ={})
    assert cfg.trainer.gamma == 0.1 and cfg.trainer.batch_size == 128
    assert cfg.eval_spec().name == "settings_perturbed"
    assert [o.event_name for o in cfg.objective_list()] == [NOTIFICATIONS_EVENT]


def test_unknown_keys_name_the_field():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"epsiodes": 3})
    assert exc.value.field == "epsiodes"
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"trainer": {"lr": 1}})
    assert exc.value.field == "trainer.lr"


@pytest.mark.parametrize("bad", [
    {"episodes": 0}, {"folds": 1}, {"seeds": []}, {"temperatures": [0.0]}, {"objectives": []},
    {"app": "calculator"}, {"data": "/no/such/file"}, {"trainer": {"gamma": 2.0}},
    {"policy": {"kind": "bogus"}}, {"objectives": [{"event": "x", "target_count": 0}]},
])
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        config_from_dict(bad)


def test_precedence_file_env_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"episodes": 5, "trainer": {"total_steps": 7, "seed": 2}}))
    env = {"GUIRL_EPISODES": "6", "GUIRL_TRAINER__SEED": "3", "OTHER": "x"}
    cfg = load_config(str(path), {"trainer": {"seed": 4}}, environ=env)
    assert cfg.episodes == 6 and cfg.trainer.total_steps == 7 and cfg.trainer.seed == 4
    assert env_overrides({"GUIRL_APP": "browser"}) == {"app": "browser"}


def test_fingerprint_ignores_output_location():
    a = config_from_dict({"out": "x", "jobs": 2})
    b = config_from_dict({"out": "y"})
    assert a.fingerprint == b.fingerprint
    assert config_from_dict({"episodes": 21}).fingerprint != b.fingerprint


def test_bad_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(p), environ={})
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"), environ={})


def test_objective_forms():
    cfg = RunConfig(objectives=[NOTIFICATIONS_EVENT, {"event": BLUETOOTH_EVENT, "target_count": 2}])
    objs = cfg.objective_list()
    assert objs[1].target_count == 2 and objs[0].target_count == 1


# --------------------------------------------------------------------- CLI

def test_unknown_key_exits_2(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"nonsense": 1}))
    assert main(["oracle", "--config", str(p), "--episodes", "0", "--out", str(tmp_path)]) == 2
    assert "nonsense" in capsys.readouterr().err


def test_pipeline_error_exits_1(tmp_path):
    assert main(["eval", "--policy", "greedy", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "x.npz"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--policy", "greedy", "--checkpoint", str(bad), "--out", str(tmp_path)]) == 1


def test_env_override_reaches_cli(tmp_path, monkeypatch):
    monkeypatch.setenv("GUIRL_EPISODES", "0")
    assert main(["gen-data", "--out", str(tmp_path / "e.jsonl")]) == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--instances", "3", "--max-nodes", "6"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["failed"] == 0 and out["max_rel_error"] < 1e-4


def test_gradient_check_instance_shapes():
    net, g, rows, kinds, targets = gradient_check_instance(random.Random(0), max_nodes=5)
    assert rows.max() < g.n and kinds.max() < net.n_action_types
    assert 1 <= len(targets) <= 16


def test_oracle_command(tmp_path):
    assert main(["oracle", "--episodes", "30", "--out", str(tmp_path)]) == 0
    row = read_csv(tmp_path / "oracle.csv")[0]
    assert float(row["hitting_mean"]) >= 200 and int(row["optimal_steps"]) == 2


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = {"episodes": 4, "eval_steps": 40, "random_runs": 2, "folds": 2, "seeds": [0],
           "trainer": {"total_steps": 6, "batch_size": 16, "eval_every": 3}}
    (d / "c.json").write_text(json.dumps(cfg))
    return d


def test_gen_train_eval(workdir):
    c = str(workdir / "c.json")
    eps, ckpt = str(workdir / "eps.jsonl"), str(workdir / "q.npz")
    assert main(["gen-data", "--config", c, "--out", eps]) == 0
    assert main(["train", "--config", c, "--data", eps, "--out", ckpt]) == 0
    net, vocab, extra = load_checkpoint(ckpt)
    assert net.in_dim == vocab.width and extra["process"] == "SystemSettings"
    metrics = read_csv(workdir / "q.metrics.csv")
    assert [int(r["step"]) for r in metrics] == list(range(7))
    assert metrics[3]["eval_reward"] != "" and metrics[1]["eval_reward"] == ""
    for policy in (["--policy", "greedy"], ["--policy", "sampler", "--temperature", "0.5"],
                   ["--policy", "random"]):
        out = workdir / policy[1]
        assert main(["eval", "--config", c, "--checkpoint", ckpt, "--out", str(out), *policy]) == 0
        row = read_csv(out / "eval.csv")[0]
        assert row["policy"] == policy[1] and int(row["steps"]) == 40


def test_xval_and_sweep(workdir):
    c = str(workdir / "c.json")
    out = workdir / "xv"
    assert main(["xval", "--config", c, "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} >= {"single_task.csv", "single_task_random.csv", "steps_table.csv"}
    agents = [r["agent"] for r in read_csv(out / "steps_table.csv")]
    assert agents == ["greedy", "qhash", "random"]
    sw = workdir / "sw"
    assert main(["sweep", "--config", c, "--out", str(sw), "--temperatures", "0.1", "1",
                 "--objective", NOTIFICATIONS_EVENT, "--objective", BLUETOOTH_EVENT]) == 0
    assert len(read_csv(sw / "temperature.csv")) == 2
    header = (sw / "multiplerewards.csv").read_text().splitlines()[1].split(",")
    assert header[:3] == ["temperature", "TotalMean", "TotalStd"] and "DeviceMean" in header
