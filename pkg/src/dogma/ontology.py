"""Distance and masking queries over the cell-type DAG and the phylogeny.

Hop distance on the type DAG treats is_a edges as undirected unit edges,
so a threshold of 1 admits exactly {same term, direct parent/child}.
All-pairs results are precomputed into read-only tables and shared.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .ingest.types import OntologyDag, PhyloTree

HOP_MODE_DEFAULT_DELTA = 2.0


def co_distance(dag: OntologyDag, a: str, b: str):
    """Shortest undirected hop count between two terms, or None when no
    path exists."""
    for t in (a, b):
        if t not in dag:
            raise ValidationError(f"unknown ontology term {t!r}")
    if a == b:
        return 0
    adj = dag.undirected_adjacency()
    seen = {a: 0}
    queue = deque([a])
    while queue:
        t = queue.popleft()
        d = seen[t]
        for nxt in adj[t]:
            if nxt not in seen:
                if nxt == b:
                    return d + 1
                seen[nxt] = d + 1
                queue.append(nxt)
    return None


def _labels_within(dag: OntologyDag, source: str, max_hops: int) -> set:
    """Terms reachable from source in at most max_hops undirected steps."""
    adj = dag.undirected_adjacency()
    seen = {source: 0}
    queue = deque([source])
    while queue:
        t = queue.popleft()
        d = seen[t]
        if d == max_hops:
            continue
        for nxt in adj[t]:
            if nxt not in seen:
                seen[nxt] = d + 1
                queue.append(nxt)
    return set(seen)


class SemanticMask:
    """Pairwise predicate: true iff both cells are labeled and their labels
    sit within `threshold` hops. Unlabeled (e.g. Query) cells never match,
    which is what keeps held-out labels out of graph construction."""

    def __init__(self, dag: OntologyDag, labels, threshold: int = 1):
        if threshold < 0:
            raise ConfigError("semantic mask threshold must be >= 0")
        self.threshold = int(threshold)
        self.labels = list(labels)
        unique = sorted({l for l in self.labels if l is not None})
        for l in unique:
            if l not in dag:
                raise ValidationError(f"cell label {l!r} is not an ontology term")
        self._allowed = {l: frozenset(_labels_within(dag, l, self.threshold) & set(unique))
                         for l in unique}

    def allowed_labels(self, label: str) -> frozenset:
        return self._allowed.get(label, frozenset())

    def label_pair(self, a, b) -> bool:
        if a is None or b is None:
            return False
        return b in self._allowed.get(a, frozenset())

    def pair(self, i: int, j: int) -> bool:
        return self.label_pair(self.labels[i], self.labels[j])


def phylo_distance(tree: PhyloTree, sa: str, sb: str) -> float:
    """Sum of branch lengths along the unique leaf-to-leaf path."""
    return tree.distance(sa, sb)


@dataclass
class CompatibilityMatrix:
    """Boolean species x species table: within the evolutionary radius."""

    species: list
    allowed: np.ndarray
    radius: float

    def __post_init__(self):
        self.allowed = np.asarray(self.allowed, dtype=bool)
        n = len(self.species)
        if self.allowed.shape != (n, n):
            raise ValidationError("compatibility matrix shape mismatch")
        if not (self.allowed == self.allowed.T).all():
            raise ValidationError("compatibility matrix must be symmetric")
        if not self.allowed.diagonal().all():
            raise ValidationError("species must be compatible with themselves")
        self._index = {s: i for i, s in enumerate(self.species)}

    def __contains__(self, species: str) -> bool:
        return species in self._index

    def allows(self, sa: str, sb: str) -> bool:
        try:
            return bool(self.allowed[self._index[sa], self._index[sb]])
        except KeyError as exc:
            raise ValidationError(f"unknown species {exc.args[0]!r}") from None

    def allowed_for(self, sa: str) -> np.ndarray:
        return self.allowed[self._index[sa]]

    def to_tsv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = ["\t".join(["species"] + list(self.species)) + "\n"]
        for i, s in enumerate(self.species):
            vals = "\t".join("1" if x else "0" for x in self.allowed[i])
            rows.append(f"{s}\t{vals}\n")
        path.write_text("".join(rows), encoding="utf-8")


def compatibility(tree: PhyloTree, species_list, delta: float) -> CompatibilityMatrix:
    """allowed[a][b] = (path distance between a and b) <= delta."""
    if delta < 0:
        raise ConfigError("evolutionary radius delta must be >= 0")
    species = list(species_list)
    n = len(species)
    allowed = np.eye(n, dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            ok = tree.distance(species[i], species[j]) <= delta
            allowed[i, j] = allowed[j, i] = ok
    return CompatibilityMatrix(species, allowed, float(delta))


def resolve_delta(tree: PhyloTree, configured) -> float:
    """Radius policy: explicit value wins; a length-free tree defaults to
    hop-distance mode with delta=2; trees with real lengths require an
    explicit radius because no universal default exists."""
    if configured is not None:
        if configured < 0:
            raise ConfigError("delta must be >= 0")
        return float(configured)
    if tree.lengths_defaulted:
        return HOP_MODE_DEFAULT_DELTA
    raise ConfigError(
        "topology.delta must be set when the phylogeny has explicit branch lengths")
