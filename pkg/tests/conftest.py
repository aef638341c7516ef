import random

import pytest
from hypothesis import strategies as st

from guirl.uitree import UINode, UITree

CLASSES = ["Button", "Pane", "TextBlock", "ListViewItem", "Hyperlink"]
CONTROL_TYPES = ["Button", "Pane", "Text", "ListItem", "Hyperlink", "Label", "MenuItem", "TabItem"]
PROCESSES = ["Settings", "Edge", "explorer"]


def nodes(max_leaves=12):
    """Hypothesis strategy for UINode trees with small property pools."""
    props = st.tuples(
        st.sampled_from(CLASSES),
        st.sampled_from(CONTROL_TYPES),
        st.sampled_from(PROCESSES),
        st.one_of(st.none(), st.sampled_from(["1", "2", "23423", "", "aé"])),
    )
    leaf = props.map(lambda p: UINode(p[0], p[1], p[2], p[3]))
    return st.recursive(
        leaf,
        lambda kids: st.tuples(props, st.lists(kids, max_size=4)).map(
            lambda t: UINode(t[0][0], t[0][1], t[0][2], t[0][3], tuple(t[1]))),
        max_leaves=max_leaves,
    )


def trees(max_leaves=12):
    return nodes(max_leaves).map(UITree)


def leaf(ctype="Button", cls="Button", process="Settings", aid=None, *children):
    return UINode(cls, ctype, process, aid, tuple(children))


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def chain_tree():
    """root -> a -> b."""
    return UITree(leaf("Pane", "Root", "Settings", None,
                       leaf("Pane", "A", "Settings", None, leaf("Button", "B", "Settings"))))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
