"""In-memory domain objects shared across the pipeline.

All of them validate their invariants at construction and are treated as
immutable afterwards, so they can be shared read-only between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..errors import ValidationError


class NormalizationState(str, Enum):
    RAW = "Raw"
    LOG_NORMALIZED = "LogNormalized"


def _check_unique(ids, kind: str):
    seen = set()
    for x in ids:
        if x in seen:
            raise ValidationError(f"duplicate {kind} id {x!r}")
        seen.add(x)


class ExpressionMatrix:
    """Sparse non-negative cells x genes matrix with stable identifiers."""

    def __init__(self, cell_ids, gene_ids, X: sp.csr_matrix,
                 normalization_state: NormalizationState = NormalizationState.RAW,
                 validate: bool = True):
        self.cell_ids = list(cell_ids)
        self.gene_ids = list(gene_ids)
        X = sp.csr_matrix(X, dtype=np.float64, copy=False)
        X.sort_indices()
        self.X = X
        self.normalization_state = normalization_state
        if validate:
            self._validate()

    @classmethod
    def from_triplets(cls, cell_ids, gene_ids, rows, cols, vals,
                      normalization_state=NormalizationState.RAW):
        """Build from coordinate triplets, rejecting duplicate coordinates
        (a plain COO->CSR conversion would silently sum them)."""
        n, m = len(cell_ids), len(gene_ids)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size:
            if rows.min() < 0 or rows.max() >= n:
                raise ValidationError("cell index out of range")
            if cols.min() < 0 or cols.max() >= m:
                raise ValidationError("gene index out of range")
            lin = rows * m + cols
            uniq, counts = np.unique(lin, return_counts=True)
            if (counts > 1).any():
                bad = uniq[counts > 1][0]
                raise ValidationError(
                    f"duplicate entry at cell {bad // m}, gene {bad % m}")
        X = sp.csr_matrix((vals, (rows, cols)), shape=(n, m), dtype=np.float64)
        return cls(cell_ids, gene_ids, X, normalization_state)

    def _validate(self):
        if len(self.cell_ids) != self.X.shape[0]:
            raise ValidationError("cell_ids length does not match matrix rows")
        if len(self.gene_ids) != self.X.shape[1]:
            raise ValidationError("gene_ids length does not match matrix columns")
        _check_unique(self.cell_ids, "cell")
        _check_unique(self.gene_ids, "gene")
        data = self.X.data
        if data.size:
            if not np.isfinite(data).all():
                raise ValidationError("matrix contains non-finite values")
            if (data < 0).any():
                raise ValidationError("matrix contains negative values")

    @property
    def n_cells(self) -> int:
        return self.X.shape[0]

    @property
    def n_genes(self) -> int:
        return self.X.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.X.nnz)

    def cell_totals(self) -> np.ndarray:
        return np.asarray(self.X.sum(axis=1)).ravel()

    def gene_nonzero_cells(self) -> np.ndarray:
        """Number of cells with a nonzero entry, per gene."""
        Xb = self.X.copy()
        Xb.data = (Xb.data != 0).astype(np.float64)
        return np.asarray(Xb.sum(axis=0)).ravel().astype(np.int64)

    def subset_cells(self, idx) -> "ExpressionMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return ExpressionMatrix([self.cell_ids[i] for i in idx], self.gene_ids,
                                self.X[idx], self.normalization_state,
                                validate=False)

    def subset_genes(self, idx) -> "ExpressionMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return ExpressionMatrix(self.cell_ids, [self.gene_ids[j] for j in idx],
                                self.X[:, idx], self.normalization_state,
                                validate=False)

    def triplets(self):
        """(rows, cols, vals) in row-major order."""
        coo = self.X.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def __eq__(self, other):
        if not isinstance(other, ExpressionMatrix):
            return NotImplemented
        if (self.cell_ids != other.cell_ids or self.gene_ids != other.gene_ids
                or self.normalization_state != other.normalization_state):
            return False
        a, b = self.triplets(), other.triplets()
        return all(np.array_equal(x, y) for x, y in zip(a, b))

    def __repr__(self):
        return (f"ExpressionMatrix({self.n_cells}x{self.n_genes}, "
                f"nnz={self.nnz}, {self.normalization_state.value})")


class Split(str, Enum):
    REFERENCE = "Reference"
    QUERY = "Query"


@dataclass
class CellMetadata:
    """Per-cell species / type / batch / split annotations, aligned by
    position to a companion ExpressionMatrix."""

    cell_ids: list
    species: list
    cell_type: list          # Optional[str]; None = unlabeled
    domain: list
    split: list              # Split values

    def __post_init__(self):
        n = len(self.cell_ids)
        for name in ("species", "cell_type", "domain", "split"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"metadata column {name} has wrong length")
        _check_unique(self.cell_ids, "cell")
        for i in range(n):
            if not self.species[i]:
                raise ValidationError(f"cell {self.cell_ids[i]!r} has empty species")
            if not self.domain[i]:
                raise ValidationError(f"cell {self.cell_ids[i]!r} has empty domain")
            if not isinstance(self.split[i], Split):
                self.split[i] = Split(self.split[i])
            if self.split[i] is Split.REFERENCE and not self.cell_type[i]:
                raise ValidationError(
                    f"Reference cell {self.cell_ids[i]!r} has no cell_type")
            if self.cell_type[i] == "":
                self.cell_type[i] = None

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    def reference_mask(self) -> np.ndarray:
        return np.array([s is Split.REFERENCE for s in self.split], dtype=bool)

    def species_array(self) -> np.ndarray:
        return np.array(self.species, dtype=object)

    def domain_array(self) -> np.ndarray:
        return np.array(self.domain, dtype=object)

    def subset(self, idx) -> "CellMetadata":
        idx = list(np.asarray(idx, dtype=np.int64))
        return CellMetadata(
            cell_ids=[self.cell_ids[i] for i in idx],
            species=[self.species[i] for i in idx],
            cell_type=[self.cell_type[i] for i in idx],
            domain=[self.domain[i] for i in idx],
            split=[self.split[i] for i in idx],
        )

    def validate_against(self, matrix: ExpressionMatrix):
        """Cell ids must match the matrix bijectively, in order."""
        if self.cell_ids != matrix.cell_ids:
            sm, sx = set(self.cell_ids), set(matrix.cell_ids)
            if sm != sx:
                missing = sorted(sx - sm)[:3]
                extra = sorted(sm - sx)[:3]
                raise ValidationError(
                    f"metadata/matrix cell id mismatch (matrix-only {missing}, "
                    f"metadata-only {extra})")
            raise ValidationError("metadata rows are not in matrix cell order")

    def validate_species(self, tree: "PhyloTree"):
        leaves = set(tree.leaf_names())
        bad = sorted({s for s in self.species if s not in leaves})
        if bad:
            raise ValidationError(
                f"species not found among phylogeny leaves: {bad[:5]}")

    def __eq__(self, other):
        if not isinstance(other, CellMetadata):
            return NotImplemented
        return (self.cell_ids == other.cell_ids and self.species == other.species
                and self.cell_type == other.cell_type and self.domain == other.domain
                and self.split == other.split)


class OntologyDag:
    """Directed acyclic graph of terms with child->parent (is_a) edges."""

    def __init__(self, terms: dict, parents: dict, validate: bool = True):
        self.terms = dict(terms)                      # id -> display name
        self.parents = {t: tuple(sorted(parents.get(t, ()))) for t in self.terms}
        self._order = None
        self._undirected = None
        if validate:
            self._validate()

    def _validate(self):
        for child, ps in self.parents.items():
            for p in ps:
                if p not in self.terms:
                    raise ValidationError(
                        f"is_a target {p!r} of term {child!r} is not declared")
        self.topological_order()  # raises on cycles

    def __contains__(self, term) -> bool:
        return term in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def n_edges(self) -> int:
        return sum(len(p) for p in self.parents.values())

    def children_map(self) -> dict:
        ch = {t: [] for t in self.terms}
        for c, ps in self.parents.items():
            for p in ps:
                ch[p].append(c)
        return {t: tuple(sorted(v)) for t, v in ch.items()}

    def topological_order(self) -> list:
        """Deterministic Kahn order (lexicographically smallest ready term
        first); raises naming a cycle if none exists."""
        if self._order is not None:
            return self._order
        import heapq
        children = self.children_map()
        # parents first: a term becomes ready once all its parents are placed
        indeg = {t: 0 for t in self.terms}
        for c, ps in self.parents.items():
            indeg[c] = len(ps)
        ready = [t for t, d in indeg.items() if d == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            t = heapq.heappop(ready)
            order.append(t)
            for c in children[t]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, c)
        if len(order) != len(self.terms):
            cycle = self._find_cycle({t for t, d in indeg.items() if d > 0})
            raise ValidationError("ontology contains a cycle: " +
                                  " -> ".join(cycle))
        self._order = order
        return order

    def _find_cycle(self, suspects) -> list:
        suspects = set(suspects)
        start = min(suspects)
        seen, path = {}, []
        node = start
        while node not in seen:
            seen[node] = len(path)
            path.append(node)
            nxt = [p for p in self.parents[node] if p in suspects]
            if not nxt:
                break
            node = min(nxt)
        if node in seen:
            cyc = path[seen[node]:] + [node]
            return cyc
        return path + [node]

    def undirected_adjacency(self) -> dict:
        """Neighbors over is_a edges viewed as undirected, sorted."""
        if self._undirected is None:
            adj = {t: set() for t in self.terms}
            for c, ps in self.parents.items():
                for p in ps:
                    adj[c].add(p)
                    adj[p].add(c)
            self._undirected = {t: tuple(sorted(v)) for t, v in adj.items()}
        return self._undirected

    def __eq__(self, other):
        if not isinstance(other, OntologyDag):
            return NotImplemented
        return self.terms == other.terms and self.parents == other.parents


@dataclass
class PhyloNode:
    name: Optional[str]
    length: Optional[float]       # branch to parent; None at the root
    children: list = field(default_factory=list)

    def is_leaf(self) -> bool:
        return not self.children


class PhyloTree:
    """Rooted tree with species at the leaves and additive branch lengths."""

    def __init__(self, root: PhyloNode, lengths_defaulted: bool = False):
        self.root = root
        # True when every branch length came from the 1.0 default, i.e. the
        # source carried no lengths at all (hop-distance semantics apply)
        self.lengths_defaulted = lengths_defaulted
        self._leaves = {}
        self._depth = {}
        self._parent = {}
        self._index(root, None, 0.0)

    def _index(self, node: PhyloNode, parent, depth: float):
        self._parent[id(node)] = parent
        self._depth[id(node)] = depth
        if node.is_leaf():
            if not node.name:
                raise ValidationError("leaf without a name")
            if node.name in self._leaves:
                raise ValidationError(f"duplicate leaf name {node.name!r}")
            self._leaves[node.name] = node
        for ch in node.children:
            if ch.length is None or ch.length < 0:
                raise ValidationError(
                    f"node {ch.name!r} has a missing or negative branch length")
            self._index(ch, node, depth + ch.length)

    def leaf_names(self) -> list:
        return sorted(self._leaves)

    def n_leaves(self) -> int:
        return len(self._leaves)

    def is_leaf(self, name: str) -> bool:
        return name in self._leaves

    def distance(self, a: str, b: str) -> float:
        """Sum of branch lengths along the unique leaf-to-leaf path."""
        for x in (a, b):
            if x not in self._leaves:
                raise ValidationError(f"unknown species {x!r}")
        if a == b:
            return 0.0
        na, nb = self._leaves[a], self._leaves[b]
        anc_a = {}
        node = na
        while node is not None:
            anc_a[id(node)] = self._depth[id(node)]
            node = self._parent[id(node)]
        node = nb
        while id(node) not in anc_a:
            node = self._parent[id(node)]
        lca_depth = self._depth[id(node)]
        return (self._depth[id(na)] - lca_depth) + (self._depth[id(nb)] - lca_depth)

    def diameter(self) -> float:
        names = self.leaf_names()
        best = 0.0
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                best = max(best, self.distance(a, b))
        return best

    def _node_eq(self, x: PhyloNode, y: PhyloNode) -> bool:
        if x.name != y.name or len(x.children) != len(y.children):
            return False
        if (x.length is None) != (y.length is None):
            return False
        if x.length is not None and x.length != y.length:
            return False
        return all(self._node_eq(a, b) for a, b in zip(x.children, y.children))

    def __eq__(self, other):
        if not isinstance(other, PhyloTree):
            return NotImplemented
        return (self.lengths_defaulted == other.lengths_defaulted
                and self._node_eq(self.root, other.root))


@dataclass
class GeneAnnotationMap:
    """gene id -> set of GO term ids; unknown genes read as unannotated."""

    terms_by_gene: dict

    def __post_init__(self):
        self.terms_by_gene = {g: frozenset(ts)
                              for g, ts in self.terms_by_gene.items()}

    def get(self, gene_id: str) -> frozenset:
        return self.terms_by_gene.get(gene_id, frozenset())

    def genes(self) -> list:
        return sorted(self.terms_by_gene)

    def all_terms(self) -> set:
        out = set()
        for ts in self.terms_by_gene.values():
            out |= ts
        return out

    def __len__(self) -> int:
        return len(self.terms_by_gene)

    def __eq__(self, other):
        if not isinstance(other, GeneAnnotationMap):
            return NotImplemented
        return self.terms_by_gene == other.terms_by_gene
