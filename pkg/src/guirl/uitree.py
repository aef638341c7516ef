"""Symbolic GUI state: trees of UI elements, their identifiers and actions.

A state is an ordered tree of :class:`UINode` objects. Each node carries four
string properties (AutomationID, ClassName, ControlType, ProcessName). The
document format mirrors the accessibility dumps the framework consumes::

    {"Identifier": "...",
     "UIProperties": [{"AutomationID": "23423", "ClassName": "MainMenu",
                       "ControlType": "Panel", "ProcessName": "StartMenu"}],
     "Children": [...]}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Optional, Sequence

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_SEP = b"\x1f"

LEFT_CLICK = "LeftClick"
ACTION_TYPES: tuple[str, ...] = (LEFT_CLICK, "RightClick", "DoubleClick")
DEFAULT_ACTION_TYPES: tuple[str, ...] = (LEFT_CLICK,)
ACTIONABLE_TYPES = frozenset({"Button", "ListItem", "MenuItem", "Hyperlink", "TabItem"})

DESKTOP_PROCESS = "explorer"


class TreeError(ValueError):
    """Base class for problems with tree documents."""


class MalformedDocument(TreeError):
    pass


class SchemaViolation(TreeError):
    pass


class CycleDetected(TreeError):
    pass


def fnv1a_64(data: bytes, h: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a hash of ``data``, optionally continuing from ``h``."""
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class UINode:
    """One GUI element. Immutable; ``children`` is a tuple."""

    class_name: str
    control_type: str
    process_name: str
    automation_id: Optional[str] = None
    children: tuple["UINode", ...] = ()

    def __post_init__(self):
        for name in ("class_name", "control_type", "process_name"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise SchemaViolation(f"{name} must be a non-empty string, got {value!r}")
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    @property
    def properties(self) -> tuple[Optional[str], str, str, str]:
        return (self.automation_id, self.class_name, self.control_type, self.process_name)

    def with_children(self, children: Iterable["UINode"]) -> "UINode":
        return UINode(self.class_name, self.control_type, self.process_name,
                      self.automation_id, tuple(children))

    @cached_property
    def identifier(self) -> int:
        return node_identifier(self)

    def __hash__(self):
        return hash((self.properties, self.children))


def _property_bytes(node: UINode) -> bytes:
    aid = node.automation_id
    parts = [b"\x01" + aid.encode("utf-8") if aid is not None else b"\x00"]
    parts += [node.class_name.encode("utf-8"), node.control_type.encode("utf-8"),
              node.process_name.encode("utf-8")]
    return _SEP.join(parts)


def node_identifier(node: UINode) -> int:
    """Hash of the four UIProperties; children do not participate.

    An absent AutomationID is encoded by a presence flag byte so that
    ``None`` and ``""`` hash differently.
    """
    return fnv1a_64(_property_bytes(node))


def format_identifier(value: int) -> str:
    return f"{value:016x}"


@dataclass(frozen=True)
class UIAction:
    node_identifier: int
    action_type: str = LEFT_CLICK

    def __post_init__(self):
        if self.action_type not in ACTION_TYPES:
            raise ValueError(f"unregistered action type {self.action_type!r}")

    def __repr__(self):
        return f"UIAction({format_identifier(self.node_identifier)}, {self.action_type})"


class UITree:
    """An ordered tree with nodes indexed in pre-order."""

    def __init__(self, root: UINode):
        self.root = root
        nodes: list[UINode] = []
        parents: list[int] = []
        stack: list[tuple[UINode, int]] = [(root, -1)]
        while stack:
            node, parent = stack.pop()
            parents.append(parent)
            idx = len(nodes)
            nodes.append(node)
            for child in reversed(node.children):
                stack.append((child, idx))
        self.nodes: tuple[UINode, ...] = tuple(nodes)
        self.parents: tuple[int, ...] = tuple(parents)

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self) -> Iterator[UINode]:
        return iter(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, UITree):
            return NotImplemented
        return self.state_hash == other.state_hash and self.root == other.root

    def __hash__(self):
        return self.state_hash

    def __repr__(self):
        return f"UITree(n={self.node_count}, hash={format_identifier(self.state_hash)})"

    @cached_property
    def identifiers(self) -> tuple[int, ...]:
        return tuple(n.identifier for n in self.nodes)

    @cached_property
    def state_hash(self) -> int:
        return canonical_state_hash(self)

    def edges(self) -> list[tuple[int, int]]:
        """Parent->child pairs in pre-order of the child."""
        return [(p, c) for c, p in enumerate(self.parents) if p >= 0]

    def index_of(self, identifier: int) -> int:
        """Pre-order index of the first node with ``identifier``; -1 if absent."""
        try:
            return self.identifiers.index(identifier)
        except ValueError:
            return -1


# ---------------------------------------------------------------- documents

def node_to_document(node: UINode) -> dict:
    props = {}
    if node.automation_id is not None:
        props["AutomationID"] = node.automation_id
    props["ClassName"] = node.class_name
    props["ControlType"] = node.control_type
    props["ProcessName"] = node.process_name
    return {
        "Identifier": format_identifier(node.identifier),
        "UIProperties": [props],
        "Children": [node_to_document(c) for c in node.children],
    }


def tree_to_document(tree: UITree) -> dict:
    return node_to_document(tree.root)


def serialize_tree(tree: UITree) -> str:
    """Canonical serialization: fixed key order, no insignificant whitespace."""
    return json.dumps(tree_to_document(tree), separators=(",", ":"), ensure_ascii=False)


def node_from_document(doc, _ancestry: Optional[set] = None) -> UINode:
    if not isinstance(doc, dict):
        raise SchemaViolation(f"node must be an object, got {type(doc).__name__}")
    props_list = doc.get("UIProperties")
    if not isinstance(props_list, list) or len(props_list) != 1 or not isinstance(props_list[0], dict):
        raise SchemaViolation("UIProperties must be an array of exactly one object")
    props = props_list[0]
    for key in ("ClassName", "ControlType", "ProcessName"):
        if key not in props:
            raise SchemaViolation(f"missing required property {key}")
    aid = props.get("AutomationID")
    if aid is not None and not isinstance(aid, str):
        raise SchemaViolation("AutomationID must be a string")
    children_docs = doc.get("Children", [])
    if not isinstance(children_docs, list):
        raise SchemaViolation("Children must be an array")

    # Identifiers hash only the properties, so an ancestor may legitimately
    # share a node's Identifier (a Pane nested in an identical Pane). A real
    # cycle can only come from an in-memory document that aliases itself.
    ancestry = set() if _ancestry is None else _ancestry
    key = id(doc)
    if key in ancestry:
        raise CycleDetected(f"node {doc.get('Identifier')!r} contains itself")
    ancestry.add(key)
    try:
        children = tuple(node_from_document(c, ancestry) for c in children_docs)
    finally:
        ancestry.discard(key)
    return UINode(class_name=props["ClassName"], control_type=props["ControlType"],
                  process_name=props["ProcessName"], automation_id=aid, children=children)


def tree_from_document(doc) -> UITree:
    return UITree(node_from_document(doc))


def parse_tree(text: str) -> UITree:
    """Parse a tree document.

    The stored ``Identifier`` field is informational and is recomputed from
    the properties rather than trusted.
    """
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise MalformedDocument(str(exc)) from exc
    return tree_from_document(doc)


# ---------------------------------------------------------------- operations

def enumerate_actions(tree: UITree, action_types: Sequence[str] = DEFAULT_ACTION_TYPES) -> list[UIAction]:
    """One action per (actionable node, action type), in pre-order."""
    if not action_types:
        raise ValueError("action_types must be non-empty")
    return [UIAction(node.identifier, t)
            for node in tree.nodes if node.control_type in ACTIONABLE_TYPES
            for t in action_types]


def actionable_indices(tree: UITree) -> list[int]:
    return [i for i, node in enumerate(tree.nodes) if node.control_type in ACTIONABLE_TYPES]


def desktop_node(children: Iterable[UINode] = ()) -> UINode:
    return UINode("#32769", "Pane", DESKTOP_PROCESS, automation_id=None, children=tuple(children))


def _matching_roots(node: UINode, process: str) -> list[UINode]:
    if node.process_name == process:
        return [_prune(node, process)]
    out = []
    for child in node.children:
        out.extend(_matching_roots(child, process))
    return out


def _prune(node: UINode, process: str) -> UINode:
    kept = []
    for child in node.children:
        kept.extend(_matching_roots(child, process))
    return node.with_children(kept)


def filter_process(tree: UITree, process: str) -> UITree:
    """Keep only nodes created by ``process``, re-rooted under a Desktop node.

    Maximal matching subtrees are hoisted to the nearest kept ancestor, so a
    matching node buried under a foreign container survives. A tree whose
    root is already the synthetic Desktop keeps that root.
    """
    root = tree.root
    if root == desktop_node(root.children):
        roots: list[UINode] = []
        for child in root.children:
            roots.extend(_matching_roots(child, process))
    else:
        roots = _matching_roots(root, process)
    return UITree(desktop_node(roots))


def canonical_state_hash(tree: UITree) -> int:
    """64-bit BLAKE2b digest of the canonical serialization of the whole tree."""
    digest = hashlib.blake2b(serialize_tree(tree).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")
