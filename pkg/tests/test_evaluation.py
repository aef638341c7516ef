import math

import numpy as np
import pytest

from guirl.apps import NOTIFICATIONS_EVENT, get_app
from guirl.env import AppSpec, Objective
from guirl.evaluation import (
    EvalReport, UnreachableObjective, _screen_graph, csv_text, evaluate_policy, expected_hitting_time,
    hitting_time_moments, mean_sd, monte_carlo_hitting_times, moving_average, optimal_actions,
    optimal_path, read_csv, spearman, value_iteration, write_csv,
)
from guirl.policy import RandomPolicy
from guirl.uitree import UIAction, UITree

from conftest import leaf
from oracles import hitting_time_by_propagation, random_chain

EVENT = Objective("done")


def chain_spec(ks, trap=False):
    """Screens ``s0..s{n-1}``; button 0 advances (firing the event on the last screen).

    The other buttons have no transition. With ``trap`` an extra button on
    ``s0`` leads to a screen with no way out.
    """
    screens, transitions, events = {}, {}, {}
    for i, k in enumerate(ks):
        kids = [leaf(process="P", aid=f"{i}-{j}") for j in range(k)]
        screens[f"s{i}"] = UITree(leaf("Pane", f"W{i}", "P", None, *kids))
    for i in range(len(ks)):
        key = (f"s{i}", screens[f"s{i}"].nodes[1].identifier, "LeftClick")
        if i + 1 < len(ks):
            transitions[key] = f"s{i + 1}"
        else:
            events[key] = EVENT.event_name
    if trap:
        screens["trap"] = UITree(leaf("Pane", "T", "P", None, leaf(process="P", aid="stuck")))
        transitions[("s0", screens["s0"].nodes[2].identifier, "LeftClick")] = "trap"
    return AppSpec("chain", screens, transitions, events, "s0", "P")


def first_button(state):
    return UIAction(state.nodes[1].identifier)


# ------------------------------------------------------------ hitting time

@pytest.mark.parametrize("k", [1, 2, 5, 9])
def test_single_screen_is_geometric(k):
    mean, sd = hitting_time_moments(chain_spec([k]), EVENT)
    assert mean == pytest.approx(k)
    assert sd == pytest.approx(math.sqrt(k * (k - 1)), abs=1e-7)


def test_two_screens_add_up():
    assert expected_hitting_time(chain_spec([4, 7]), EVENT) == pytest.approx(11)


def test_linear_solve_matches_propagation_on_settings():
    spec = get_app("settings")
    _, screens, index, P, _ = _screen_graph(spec, NOTIFICATIONS_EVENT)
    ref = hitting_time_by_propagation(P, None, index["home"])
    assert expected_hitting_time(spec, Objective(NOTIFICATIONS_EVENT)) == pytest.approx(ref, rel=1e-9)


def test_propagation_matches_linear_solve_on_random_chains():
    rng = np.random.default_rng(0)
    for _ in range(5):
        n = int(rng.integers(2, 8))
        P, absorb = random_chain(rng, n, rng.integers(1, 6, size=n), fire_screen=0)
        A = np.eye(n) - P
        if abs(np.linalg.det(A)) < 1e-9:
            continue
        t = np.linalg.solve(A, np.ones(n))
        assert hitting_time_by_propagation(P, absorb, 0) == pytest.approx(t[0], rel=1e-8)


def test_monte_carlo_agrees_with_moments():
    spec = chain_spec([3, 5])
    mean, sd = hitting_time_moments(spec, EVENT)
    samples = monte_carlo_hitting_times(spec, EVENT, 4000, seed=1)
    assert abs(samples.mean() - mean) < 4 * sd / math.sqrt(len(samples))
    assert samples.std() == pytest.approx(sd, rel=0.1)


def test_trapped_screen_is_unreachable():
    with pytest.raises(UnreachableObjective):
        expected_hitting_time(chain_spec([3, 2], trap=True), EVENT)


def test_oracles_reject_repeat_targets():
    with pytest.raises(ValueError):
        hitting_time_moments(chain_spec([2]), Objective("done", 2))
    with pytest.raises(ValueError):
        value_iteration(chain_spec([2]), Objective("done", 2))


# --------------------------------------------------------- value iteration

def test_value_iteration_on_chain():
    q = value_iteration(chain_spec([3, 2]), EVENT, gamma=0.1)
    acts0, q0 = q["s0"]
    acts1, q1 = q["s1"]
    np.testing.assert_allclose(q1, [1.0, 0.1])
    np.testing.assert_allclose(q0, [0.1, 0.01, 0.01])
    assert optimal_actions(q["s0"]) == {acts0[0]}
    assert optimal_path(chain_spec([3, 2]), EVENT) == ["s0", "s1"]


def test_settings_optimal_path_is_home_then_system():
    path = optimal_path(get_app("settings_perturbed"), Objective(NOTIFICATIONS_EVENT))
    assert path == ["home", "cat/System"]


def test_optimal_actions_keeps_ties():
    a, b, c = UIAction(1), UIAction(2), UIAction(3)
    assert optimal_actions(([a, b, c], np.array([0.5, 0.5, 0.1]))) == {a, b}


# -------------------------------------------------------------- evaluation

def test_zero_steps():
    r = evaluate_policy(first_button, chain_spec([2]), EVENT, n_steps=0)
    assert r.unique_states == 1 and r.total_reward == 0 and r.steps_per_reward == []
    assert math.isinf(r.mean_steps_per_reward)


def test_optimal_policy_counts():
    r = evaluate_policy(first_button, chain_spec([3, 2]), EVENT, n_steps=101)
    assert r.reward_count == 50 and r.steps_per_reward == [2] * 50
    assert r.unique_states == 2 and r.rewards == {"done": 50}


def test_random_policy_invariants():
    spec = get_app("settings")
    r = evaluate_policy(RandomPolicy(3), spec, Objective(NOTIFICATIONS_EVENT), n_steps=400, lenient=True)
    assert r.reward_count == len(r.steps_per_reward)
    assert sum(r.steps_per_reward) <= r.steps == 400
    assert 1 <= r.unique_states <= len(spec.screens)
    again = evaluate_policy(RandomPolicy(3), spec, Objective(NOTIFICATIONS_EVENT), n_steps=400, lenient=True)
    assert again == r


def test_target_count_scales_total_reward():
    r = evaluate_policy(first_button, chain_spec([1]), Objective("done", 4), n_steps=8)
    assert r.rewards == {"done": 8} and r.total_reward == 2.0


# --------------------------------------------------------------- statistics

def test_statistics_helpers():
    assert mean_sd([1, 3]) == (2.0, 1.0)
    assert all(math.isnan(v) for v in mean_sd([]))
    assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    np.testing.assert_allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
    assert moving_average([1, 2], 5).tolist() == [1, 2]


def test_report_mean_steps():
    r = EvalReport(2.0, {"e": 2}, [3, 5], 4, 10)
    assert r.mean_steps_per_reward == 4.0


# --------------------------------------------------------------------- CSV

def test_csv_is_deterministic_and_round_trips(tmp_path):
    rows = [(0, 0.1, "a"), (1, np.float64(1 / 3), "b")]
    text = csv_text(["x", "y", "z"], rows, "abc")
    assert text == csv_text(["x", "y", "z"], rows, "abc")
    assert text.splitlines()[0] == "# config=abc"
    write_csv(tmp_path / "t.csv", ["x", "y", "z"], rows, "abc")
    back = read_csv(tmp_path / "t.csv")
    assert float(back[1]["y"]) == 1 / 3 and back[0]["z"] == "a"
