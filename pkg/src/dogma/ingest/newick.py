"""Newick parser for a plain subset: unquoted names, optional ':length'
suffixes, single tree terminated by ';'. Missing branch lengths default to
1.0 so hop-distance semantics stay available on length-free trees.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import ParseError, ValidationError
from .types import PhyloNode, PhyloTree

_SPECIAL = set("():,;")


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def peek(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self):
        ch = self.peek()
        if ch:
            self.pos += 1
        return ch

    def name(self) -> str:
        self.peek()  # skip leading whitespace
        start = self.pos
        while (self.pos < len(self.text)
               and self.text[self.pos] not in _SPECIAL
               and not self.text[self.pos].isspace()):
            self.pos += 1
        return self.text[start:self.pos]


def parse_newick(text: str) -> PhyloTree:
    """Parse a single Newick expression into a PhyloTree."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("<newick>", None, f"not valid UTF-8: {exc}") from None
    cur = _Cursor(text)
    seen_explicit = False

    def fail(msg):
        raise ParseError("<newick>", None, f"at offset {cur.pos}: {msg}")

    def subtree() -> PhyloNode:
        nonlocal seen_explicit
        node = PhyloNode(name=None, length=None, children=[])
        if cur.peek() == "(":
            cur.take()
            while True:
                node.children.append(subtree())
                ch = cur.take()
                if ch == ",":
                    continue
                if ch == ")":
                    break
                fail("expected ',' or ')'" if ch else "unbalanced parentheses")
            label = cur.name()
            node.name = label or None
        else:
            label = cur.name()
            if not label:
                fail("expected a leaf name")
            node.name = label
        if cur.peek() == ":":
            cur.take()
            token = cur.name()
            try:
                length = float(token)
            except ValueError:
                fail(f"invalid branch length {token!r}")
            if length < 0:
                fail(f"negative branch length {length}")
            node.length = length
            seen_explicit = True
        return node

    root = subtree()
    if cur.peek() != ";":
        fail("missing ';' terminator")
    cur.take()
    if cur.peek():
        fail("trailing content after ';'")
    if root.length is not None:
        raise ParseError("<newick>", None,
                         "branch length on the root is not supported")
    _apply_default_lengths(root, is_root=True)
    try:
        return PhyloTree(root, lengths_defaulted=not seen_explicit)
    except ValidationError as exc:
        raise ParseError("<newick>", None, str(exc)) from None


def _apply_default_lengths(node: PhyloNode, is_root: bool = False):
    if not is_root and node.length is None:
        node.length = 1.0
    for ch in node.children:
        _apply_default_lengths(ch)


def read_newick(path) -> PhyloTree:
    path = Path(path)
    if not path.exists():
        raise ParseError(path, None, "file does not exist")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(path, None, f"not valid UTF-8: {exc}") from None
    try:
        return parse_newick(text)
    except ParseError as exc:
        raise ParseError(path, exc.line, exc.message) from None


def to_newick(tree: PhyloTree) -> str:
    """Serialize preserving child order. Length-free trees are written
    without lengths so the defaulted flag survives a round trip."""
    write_lengths = not tree.lengths_defaulted

    def fmt(node: PhyloNode, is_root: bool) -> str:
        if node.children:
            inner = ",".join(fmt(ch, False) for ch in node.children)
            out = f"({inner})" + (node.name or "")
        else:
            out = node.name
        if not is_root and write_lengths:
            out += f":{node.length!r}"
        return out

    return fmt(tree.root, True) + ";"


def write_newick(tree: PhyloTree, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_newick(tree) + "\n", encoding="utf-8")
