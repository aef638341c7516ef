import numpy as np
import pytest

from guirl.apps import BLUETOOTH_EVENT, NOTIFICATIONS_EVENT, SETTINGS_PROCESS, get_app
from guirl.data import (
    CollectionBudgetExceeded, Episode, EpisodeStore, NoQualifyingEpisodes, ObjectiveNotMet,
    TooFewEpisodes, Transition, build_training_set, collect_random_episodes, collect_task_corpus,
    crop_episode, episode_meets_objective, k_fold_split,
)
from guirl.env import Objective
from guirl.featurize import build_vocabulary
from guirl.uitree import UIAction, UITree

from conftest import leaf

NOTIF = Objective(NOTIFICATIONS_EVENT)
BT = Objective(BLUETOOTH_EVENT)


@pytest.fixture(scope="module")
def settings():
    return get_app("settings")


@pytest.fixture(scope="module")
def store(settings):
    return collect_random_episodes(settings, NOTIF, count=6, max_len=100, seed=0)


def synthetic(events_per_step):
    """Episode over a trivial screen whose step ``i`` fires ``events_per_step[i]``."""
    s = UITree(leaf("Pane", "R", "P", None, leaf(process="P", aid="b")))
    act = UIAction(s.nodes[1].identifier)
    ts = [Transition(s, act, float(bool(ev)), s, False, tuple(ev)) for ev in events_per_step]
    return Episode(ts, app="toy")


# -------------------------------------------------------------- collection

def test_collected_episodes_qualify(store):
    assert len(store) == 6
    for ep in store:
        assert 1 <= len(ep) <= 100
        assert episode_meets_objective(ep, NOTIF)
        assert ep.transitions[-1].done and ep.transitions[-1].reward == 1.0
        assert ep.is_chain_consistent()


def test_collection_is_seeded(settings, store):
    again = collect_random_episodes(settings, NOTIF, count=6, max_len=100, seed=0)
    assert [[t.action for t in ep.transitions] for ep in again] == \
           [[t.action for t in ep.transitions] for ep in store]


def test_collection_budget(settings):
    with pytest.raises(CollectionBudgetExceeded):
        collect_random_episodes(settings, NOTIF, count=1, max_len=1, seed=0, max_attempts=5)
    with pytest.raises(ValueError):
        collect_random_episodes(settings, NOTIF, count=0, max_len=10, seed=0)


def test_exclusive_corpus_has_no_cross_events(settings):
    corpus = collect_task_corpus(settings, [NOTIF, BT], count=3, max_len=100, seed=4, exclusive=True)
    assert len(corpus) == 6
    for ep in corpus:
        assert len({e for _, e in ep.fired_events}) == 1


# ------------------------------------------------------------------ crop

def test_crop_stops_at_first_event():
    ep = synthetic([(), (), ("x",), (), ("x",)])
    c = crop_episode(ep, Objective("x"))
    assert len(c) == 3 and c.transitions[-1].done
    assert len(crop_episode(ep, Objective("x", 2))) == 5


def test_crop_missing_event():
    with pytest.raises(ObjectiveNotMet):
        crop_episode(synthetic([(), ()]), Objective("x"))
    assert not episode_meets_objective(synthetic([("x",)]), Objective("x", 2))


def test_chain_consistency_detects_breaks():
    a = UITree(leaf(aid="1"))
    b = UITree(leaf(aid="2"))
    act = UIAction(a.root.identifier)
    broken = Episode([Transition(a, act, 0.0, a, False), Transition(b, act, 0.0, b, False)])
    assert not broken.is_chain_consistent()


# ----------------------------------------------------------- training set

def test_training_set_reward_sum_equals_episode_count(settings, store):
    vocab = build_vocabulary(store, process=SETTINGS_PROCESS, include_automation_id=False)
    ds = build_training_set(store, [NOTIF], SETTINGS_PROCESS, vocab)
    assert ds.reward.sum() == len(store)
    assert ds.done.sum() == len(store)
    assert np.all(ds.reward[ds.done] == 1.0)
    # rows are deduplicated by state hash
    assert len(ds.graphs) == len({g for g in ds.state} | {g for g in ds.next_state})
    for g, acts in zip(ds.graphs, ds.next_actions):
        assert acts.shape[1] == 2 and np.all(acts[:, 0] < g.x.shape[0])


def test_incidental_event_earns_nothing_for_other_task():
    ep = synthetic([(BLUETOOTH_EVENT,), (), (NOTIFICATIONS_EVENT,), ()])
    vocab = build_vocabulary([ep], process="P", min_count=1)
    ds = build_training_set([ep], [NOTIF], "P", vocab)
    assert ds.reward.tolist() == [0.0, 0.0, 1.0]
    both = build_training_set([ep], [NOTIF, BT], "P", vocab)
    assert both.reward.tolist() == [0.0, 0.0, 1.0, 1.0]
    assert both.objective.tolist() == [0, 0, 0, 1]


def test_target_count_scales_reward():
    ep = synthetic([("x",), (), ("x",)])
    vocab = build_vocabulary([ep], process="P", min_count=1)
    ds = build_training_set([ep], [Objective("x", 2)], "P", vocab)
    assert ds.reward.tolist() == [0.5, 0.0, 0.5]


def test_no_qualifying_episode():
    ep = synthetic([(), ()])
    vocab = build_vocabulary([ep], process="P", min_count=1)
    with pytest.raises(NoQualifyingEpisodes):
        build_training_set([ep], [Objective("x")], "P", vocab)


def test_take_preserves_graph_table(settings, store):
    vocab = build_vocabulary(store, process=SETTINGS_PROCESS)
    ds = build_training_set(store, [NOTIF], SETTINGS_PROCESS, vocab)
    sub = ds.take([0, 2])
    assert len(sub) == 2 and sub.graphs is ds.graphs
    assert sub.state.tolist() == ds.state[[0, 2]].tolist()


# ----------------------------------------------------------------- k-fold

def test_k_fold_partition():
    store = EpisodeStore([synthetic([("x",)]) for _ in range(11)])
    pairs = k_fold_split(store, 5, seed=3)
    assert len(pairs) == 5
    held = []
    for train, test in pairs:
        assert len(train) + len(test) == 11 and len(test) >= 2
        ids = {id(ep) for ep in train}
        assert not ids & {id(ep) for ep in test}
        held.extend(id(ep) for ep in test)
    assert sorted(held) == sorted(id(ep) for ep in store)
    assert [len(t) for _, t in k_fold_split(store, 5, seed=3)] == [len(t) for _, t in pairs]


def test_k_fold_limits():
    store = EpisodeStore([synthetic([("x",)]) for _ in range(3)])
    with pytest.raises(TooFewEpisodes):
        k_fold_split(store, 4, 0)
    with pytest.raises(TooFewEpisodes):
        k_fold_split(store, 1, 0)


# ------------------------------------------------------------ persistence

def test_store_round_trip(tmp_path, store):
    store.save(tmp_path / "eps.jsonl")
    back = EpisodeStore.load(tmp_path / "eps.jsonl")
    assert len(back) == len(store) and back.app == "settings"
    for a, b in zip(store, back):
        assert a.transitions == b.transitions
        assert b.is_chain_consistent()


def test_store_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"format": "other"}\n')
    with pytest.raises(ValueError):
        EpisodeStore.load(p)
