"""OBO 1.2 subset parser: [Term] stanzas with id / name / is_a /
is_obsolete. Every other tag and stanza type is ignored. part_of and other
relationship lines are deliberately not read; only the is_a hierarchy
matters here.
"""

from __future__ import annotations

from pathlib import Path

from ..errors import ParseError, ValidationError
from .types import OntologyDag


def parse_obo(path) -> OntologyDag:
    path = Path(path)
    if not path.exists():
        raise ParseError(path, None, "file does not exist")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(path, None, f"not valid UTF-8: {exc}") from None

    terms = {}           # id -> name
    parents = {}         # id -> list of is_a targets
    obsolete = set()
    isa_lines = {}       # (child, parent) -> first line number, for messages

    stanza = None        # None | "term" | "other"
    cur_id = None
    cur_name = ""
    cur_parents = []     # (target, line number)
    cur_obsolete = False
    cur_start = 0

    def flush(lineno):
        nonlocal cur_id, cur_name, cur_parents, cur_obsolete
        if stanza == "term":
            if cur_id is None:
                raise ParseError(path, cur_start, "[Term] stanza without an id")
            if cur_obsolete:
                obsolete.add(cur_id)
            else:
                if cur_id in terms:
                    raise ParseError(path, lineno, f"duplicate term id {cur_id!r}")
                terms[cur_id] = cur_name
                parents[cur_id] = [t for t, _ in cur_parents]
                for t, isa_ln in cur_parents:
                    isa_lines.setdefault((cur_id, t), isa_ln)
        cur_id, cur_name, cur_parents, cur_obsolete = None, "", [], False

    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("!"):
            continue
        if line.startswith("["):
            flush(lineno)
            stanza = "term" if line == "[Term]" else "other"
            cur_start = lineno
            continue
        if stanza != "term":
            continue
        if ":" not in line:
            raise ParseError(path, lineno, f"expected 'tag: value', got {line!r}")
        tag, value = line.split(":", 1)
        tag = tag.strip()
        value = value.strip()
        if tag == "id":
            if not value:
                raise ParseError(path, lineno, "empty id")
            cur_id = value
        elif tag == "name":
            cur_name = value
        elif tag == "is_a":
            target = value.split("!", 1)[0].strip()
            if not target:
                raise ParseError(path, lineno, "is_a without a target term")
            cur_parents.append((target, lineno))
        elif tag == "is_obsolete":
            cur_obsolete = value.lower() == "true"
        # other tags ignored
    flush(len(lines))

    for child, ps in parents.items():
        for p in ps:
            if p in obsolete:
                raise ParseError(path, isa_lines.get((child, p)),
                                 f"term {child!r} references obsolete term {p!r}")
            if p not in terms:
                raise ParseError(path, isa_lines.get((child, p)),
                                 f"is_a target {p!r} is not declared")

    try:
        return OntologyDag(terms, parents)
    except ValidationError as exc:
        raise ParseError(path, None, str(exc)) from None


def write_obo(dag: OntologyDag, path) -> None:
    """Stanzas in sorted term order; parse(write(dag)) == dag."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = ["format-version: 1.2\n"]
    for term in sorted(dag.terms):
        chunks.append("\n[Term]\n")
        chunks.append(f"id: {term}\n")
        name = dag.terms[term]
        if name:
            chunks.append(f"name: {name}\n")
        for parent in dag.parents[term]:
            chunks.append(f"is_a: {parent}\n")
    path.write_text("".join(chunks), encoding="utf-8")
