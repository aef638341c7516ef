import pytest

from guirl.apps import (
    BLUETOOTH_EVENT, BUILTIN_TASKS, FAVORITE_EVENT, NOTIFICATIONS_EVENT, SETTINGS_PROCESS, get_app,
    list_builtin_apps,
)
from guirl.env import (
    AppSpec, GuiSimulator, NotReset, Objective, SpecError, UnknownEvent, perturb, reset,
    shortest_path_length,
)
from guirl.evaluation import expected_hitting_time
from guirl.featurize import NodeNotInState
from guirl.uitree import UIAction, UITree, enumerate_actions, serialize_tree

from conftest import leaf


def by_aid(tree, aid):
    for n in tree.nodes:
        if n.automation_id == aid:
            return UIAction(n.identifier)
    raise LookupError(aid)


@pytest.fixture(scope="module")
def settings():
    return get_app("settings")


def event_action(spec, event):
    (screen, ident, kind), = [k for k, v in spec.events.items() if v == event]
    return screen, UIAction(ident, kind)


# ------------------------------------------------------------------- reset

def test_reset_is_deterministic(settings):
    a = GuiSimulator(settings, Objective(NOTIFICATIONS_EVENT)).reset(3)
    b = GuiSimulator(settings, Objective(NOTIFICATIONS_EVENT)).reset(3)
    assert serialize_tree(a) == serialize_tree(b)
    assert a == settings.screens["home"]


def test_perturbed_home_differs_only_in_automation_ids(settings):
    _, plain = reset(settings, Objective(NOTIFICATIONS_EVENT))
    _, pert = reset(get_app("settings_perturbed"), Objective(NOTIFICATIONS_EVENT))
    assert serialize_tree(plain) != serialize_tree(pert)
    assert plain.node_count == pert.node_count
    strip = [(n.class_name, n.control_type, n.process_name) for n in plain.nodes]
    assert strip == [(n.class_name, n.control_type, n.process_name) for n in pert.nodes]
    changed = [a.automation_id != b.automation_id for a, b in zip(plain.nodes, pert.nodes)
               if a.automation_id is not None]
    assert all(changed)


def test_state_before_reset():
    sim = GuiSimulator(get_app("settings"), Objective(NOTIFICATIONS_EVENT))
    with pytest.raises(NotReset):
        sim.state
    with pytest.raises(NotReset):
        sim.step(UIAction(1))


# -------------------------------------------------------------------- step

def test_system_then_notifications(settings):
    sim, home = reset(settings, Objective(NOTIFICATIONS_EVENT))
    r = sim.step(by_aid(home, "SettingsPageGroupSystem"))
    assert r.reward == 0.0 and not r.done and r.info["screen"] == "cat/System"
    screen, act = event_action(sim.spec, NOTIFICATIONS_EVENT)
    assert screen == "cat/System"
    r = sim.step(act)
    assert r.reward == 1.0 and r.done and r.info["events"] == [NOTIFICATIONS_EVENT]
    with pytest.raises(NotReset):
        sim.step(act)


def test_unwired_action_is_a_noop(settings):
    sim, home = reset(settings, Objective(NOTIFICATIONS_EVENT))
    wired = {i for (s, i, _) in settings.transitions if s == "home"}
    wired |= {i for (s, i, _) in settings.events if s == "home"}
    idle = next(a for a in enumerate_actions(home) if a.node_identifier not in wired)
    r = sim.step(idle)
    assert r.next_state == home and r.reward == 0.0 and not r.done


def test_stale_action_strict_and_lenient(settings):
    sim, _ = reset(settings, Objective(NOTIFICATIONS_EVENT))
    with pytest.raises(NodeNotInState):
        sim.step(UIAction(12345))
    sim, home = reset(settings, Objective(NOTIFICATIONS_EVENT), lenient=True)
    r = sim.step(UIAction(12345))
    assert r.next_state == home and r.reward == 0.0 and r.info["stale"]


def test_unknown_event(settings):
    with pytest.raises(UnknownEvent):
        GuiSimulator(settings, Objective("no_such_event"))
    with pytest.raises(UnknownEvent):
        shortest_path_length(settings, "no_such_event")


def test_target_count_needs_repeats():
    spec = tiny_spec()
    back = spec.screens["page"].nodes[1].identifier
    spec.transitions[("page", back, "LeftClick")] = "home"
    sim, home = reset(spec, Objective("went", target_count=2))
    go = UIAction(home.nodes[1].identifier)
    first = sim.step(go)
    assert first.reward == 1.0 and not first.done
    sim.step(UIAction(back))
    assert sim.step(go).done


def test_objective_validation():
    with pytest.raises(ValueError):
        Objective("x", 0)
    assert Objective("x", 4).reward_scale == 0.25


def test_multi_objective_done_on_any(settings):
    sim, home = reset(settings, [Objective(NOTIFICATIONS_EVENT), Objective(BLUETOOTH_EVENT)])
    sim.step(by_aid(home, "SettingsPageGroupDevices"))
    _, act = event_action(sim.spec, BLUETOOTH_EVENT)
    r = sim.step(act)
    assert r.done and r.info["events"] == [BLUETOOTH_EVENT]


def test_same_actions_same_trajectory(settings):
    trace = []
    for _ in range(2):
        sim, _ = reset(settings, Objective(NOTIFICATIONS_EVENT), seed=5, lenient=True)
        out = []
        for k in range(30):
            acts = sim.available_actions()
            r = sim.step(acts[(7 * k) % len(acts)])
            out.append((serialize_tree(r.next_state), r.reward))
            if r.done:
                break
        trace.append(out)
    assert trace[0] == trace[1]


# -------------------------------------------------------------- app specs

def tiny_spec(**kw):
    btn = leaf(aid="go")
    home = UITree(leaf("Pane", "W", "P", None, btn))
    page = UITree(leaf("Pane", "W2", "P", None, leaf(aid="back")))
    d = dict(name="tiny", screens={"home": home, "page": page},
             transitions={("home", btn.identifier, "LeftClick"): "page"},
             events={("home", btn.identifier, "LeftClick"): "went"},
             initial_screen="home", process="P")
    d.update(kw)
    return AppSpec(**d)


def test_spec_validation():
    assert tiny_spec().event_names == {"went"}
    with pytest.raises(SpecError):
        tiny_spec(initial_screen="nope")
    with pytest.raises(SpecError):
        tiny_spec(transitions={})
    with pytest.raises(SpecError):
        tiny_spec(events={("home", 99, "LeftClick"): "x"})
    with pytest.raises(SpecError):
        tiny_spec(screens={"home": UITree(leaf("Pane", "W", "P", None, leaf(aid="go"))),
                           "page": UITree(leaf("Pane"))})


def test_spec_round_trip(tmp_path, settings):
    settings.save(tmp_path / "s.json")
    back = AppSpec.load(tmp_path / "s.json")
    assert back.screens == settings.screens
    assert back.transitions == settings.transitions and back.events == settings.events


def test_perturb_is_seeded_and_preserves_shape(settings):
    a, b = perturb(settings, 1), perturb(settings, 1)
    assert a.screens == b.screens
    assert perturb(settings, 2).screens != a.screens
    assert len(a.transitions) == len(settings.transitions)
    assert sorted(a.events.values()) == sorted(settings.events.values())
    assert perturb(settings) is settings


def test_builtin_apps():
    apps = list_builtin_apps()
    assert [a.name for a in apps] == ["settings", "browser", "settings_perturbed", "browser_perturbed"]
    for app in apps:
        assert app.reachable_screens() == set(app.screens)
    with pytest.raises(KeyError):
        get_app("calculator")


@pytest.mark.parametrize("task", sorted(BUILTIN_TASKS))
def test_builtin_tasks_are_two_steps(task):
    app, event = BUILTIN_TASKS[task]
    assert shortest_path_length(get_app(app), event) == 2
    assert shortest_path_length(get_app(app + "_perturbed"), event) == 2


def test_settings_home_is_crowded(settings):
    home = settings.screens["home"]
    in_app = [a for a in enumerate_actions(home)
              if home.nodes[home.index_of(a.node_identifier)].process_name == SETTINGS_PROCESS]
    assert len(in_app) >= 21
    assert len(settings.screens) >= 60


def test_browser_favorite_event_exists():
    assert FAVORITE_EVENT in get_app("browser").event_names


def test_random_walk_is_slow(settings):
    assert expected_hitting_time(settings, Objective(NOTIFICATIONS_EVENT)) >= 200
