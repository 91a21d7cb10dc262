"""Edge construction: MNN alignment edges, ontology-masked edges,
phylogenetically stratified edges, their provenance-tagged union, and
inductive attachment of Query cells.

Every neighbor search goes through the blocked cosine top-k kernel with
(similarity desc, lower index first) tie-breaking, which is what makes
graphs reproducible across platforms and backends.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, ValidationError
from .features import (
    FeatureConfig,
    FeatureMatrix,
    ViewTag,
    fit_go,
    fit_pca,
    fuse,
    log_normalize,
)
from .ingest.types import (
    CellMetadata,
    ExpressionMatrix,
    NormalizationState,
    OntologyDag,
    PhyloTree,
    Split,
)
from .ontology import CompatibilityMatrix, SemanticMask, compatibility, resolve_delta

logger = logging.getLogger(__name__)


class Provenance(str, Enum):
    ALIGN = "Align"
    ONTO = "Onto"
    PHY = "Phy"
    QUERY_ATTACH = "QueryAttach"


@dataclass
class TopologyConfig:
    k_align: int = 10
    k_onto: int = 10
    k_phy: int = 10
    delta: float | None = None
    enable_align: bool = True
    enable_onto: bool = True
    enable_phy: bool = True
    enable_go: bool = True
    co_threshold: int = 1
    align_respect_compatibility: bool = True
    block_rows: int = 512

    def __post_init__(self):
        for name in ("k_align", "k_onto", "k_phy"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.co_threshold < 0:
            raise ConfigError("co_threshold must be >= 0")
        if self.block_rows < 1:
            raise ConfigError("block_rows must be >= 1")


class CellGraph:
    """Undirected cell graph with provenance-tagged edges, stored once per
    pair with u < v."""

    def __init__(self, cell_ids, edges=None, node_features: FeatureMatrix | None = None):
        self.cell_ids = list(cell_ids)
        self.node_features = node_features
        self._edges = {}
        if edges:
            for (u, v), tags in edges.items():
                self._edges[(u, v)] = set(tags)
        self._check_structure()

    def _check_structure(self):
        n = self.n_cells
        for (u, v), tags in self._edges.items():
            if u == v:
                raise ValidationError(f"self-loop on node {u}")
            if not (0 <= u < v < n):
                raise ValidationError(f"edge ({u}, {v}) is not canonical (u < v)")
            if not tags:
                raise ValidationError(f"edge ({u}, {v}) carries no provenance")
        if self.node_features is not None and self.node_features.n_cells != n:
            raise ValidationError("node feature rows do not match cell count")

    @property
    def n_cells(self) -> int:
        return len(self.cell_ids)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def add_edges(self, pairs, tag: Provenance):
        for u, v in pairs:
            if u == v:
                raise ValidationError(f"self-loop on node {u}")
            key = (u, v) if u < v else (v, u)
            self._edges.setdefault(key, set()).add(tag)

    def edge_items(self):
        """Sorted (u, v, frozenset(tags)) triples."""
        for (u, v) in sorted(self._edges):
            yield u, v, frozenset(self._edges[(u, v)])

    def edge_pairs(self) -> list:
        return sorted(self._edges)

    def tags_of(self, u: int, v: int) -> frozenset:
        key = (u, v) if u < v else (v, u)
        return frozenset(self._edges.get(key, frozenset()))

    def counts_by_provenance(self) -> dict:
        out = {p.value: 0 for p in Provenance}
        for tags in self._edges.values():
            for t in tags:
                out[t.value] += 1
        return out

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_cells, dtype=np.int64)
        for u, v in self._edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def neighbors(self) -> list:
        adj = [[] for _ in range(self.n_cells)]
        for u, v in self._edges:
            adj[u].append(v)
            adj[v].append(u)
        return [sorted(a) for a in adj]

    def copy(self) -> "CellGraph":
        return CellGraph(self.cell_ids,
                         {k: set(v) for k, v in self._edges.items()},
                         self.node_features)

    def __eq__(self, other):
        if not isinstance(other, CellGraph):
            return NotImplemented
        if self.cell_ids != other.cell_ids:
            return False
        if {k: frozenset(v) for k, v in self._edges.items()} != \
           {k: frozenset(v) for k, v in other._edges.items()}:
            return False
        a, b = self.node_features, other.node_features
        if (a is None) != (b is None):
            return False
        return a is None or np.array_equal(a.values, b.values)

    def validate(self, meta: CellMetadata | None = None,
                 mask: SemanticMask | None = None,
                 compat: CompatibilityMatrix | None = None) -> None:
        """Exhaustive invariant scan; raises ValidationError on violation."""
        self._check_structure()
        if meta is None:
            return
        for u, v, tags in self.edge_items():
            su, sv = meta.species[u], meta.species[v]
            if Provenance.ONTO in tags:
                if meta.split[u] is not Split.REFERENCE or meta.split[v] is not Split.REFERENCE:
                    raise ValidationError(f"Onto edge ({u},{v}) touches a Query cell")
                if mask is not None and not mask.pair(u, v):
                    raise ValidationError(f"Onto edge ({u},{v}) violates the semantic mask")
            if Provenance.PHY in tags:
                if su == sv:
                    raise ValidationError(f"Phy edge ({u},{v}) joins one species")
                if compat is not None and not compat.allows(su, sv):
                    raise ValidationError(f"Phy edge ({u},{v}) violates compatibility")
            if Provenance.ALIGN in tags and compat is not None and su != sv:
                if not compat.allows(su, sv):
                    raise ValidationError(f"Align edge ({u},{v}) violates compatibility")
            if Provenance.QUERY_ATTACH in tags and compat is not None:
                if not compat.allows(su, sv):
                    raise ValidationError(f"QueryAttach edge ({u},{v}) violates compatibility")


def cosine_topk(X, candidates, k: int, block_rows: int = 512) -> list:
    """Spec surface: per-node neighbor lists by cosine similarity.

    `candidates` may be None (all other nodes), one shared index array, or
    a per-node sequence of index arrays. Returns one int64 array per node,
    ranked by (similarity desc, lower index first), padding stripped.
    """
    X = np.asarray(X.values if isinstance(X, FeatureMatrix) else X, dtype=np.float64)
    n = X.shape[0]
    ids = np.arange(n, dtype=np.int64)
    if candidates is None or isinstance(candidates, np.ndarray):
        cand = ids if candidates is None else \
            np.unique(np.asarray(candidates, dtype=np.int64))
        picked = kernels.cosine_topk_ids(X, ids, X[cand], cand, k,
                                         block_rows=block_rows)
        return [row[row >= 0] for row in picked]
    out = []
    for i in range(n):
        cand = np.unique(np.asarray(candidates[i], dtype=np.int64))
        if cand.size == 0:
            out.append(np.array([], dtype=np.int64))
            continue
        picked = kernels.cosine_topk_ids(X[i:i + 1], ids[i:i + 1],
                                         X[cand], cand, k,
                                         block_rows=block_rows)[0]
        out.append(picked[picked >= 0])
    return out


def _directed_topk_pairs(X, query_idx, cand_idx, k, block_rows) -> set:
    """{(q, c)} for the top-k candidates of each query row."""
    if len(query_idx) == 0 or len(cand_idx) == 0:
        return set()
    query_idx = np.asarray(query_idx, dtype=np.int64)
    cand_idx = np.asarray(cand_idx, dtype=np.int64)
    picked = kernels.cosine_topk_ids(X[query_idx], query_idx, X[cand_idx],
                                     cand_idx, k, block_rows=block_rows)
    pairs = set()
    for r, q in enumerate(query_idx):
        for c in picked[r]:
            if c >= 0:
                pairs.add((int(q), int(c)))
    return pairs


def _species_groups(meta: CellMetadata, indices) -> dict:
    groups = {}
    for i in indices:
        groups.setdefault(meta.species[i], []).append(i)
    return {s: np.array(v, dtype=np.int64) for s, v in sorted(groups.items())}


def mnn_edges(X, meta: CellMetadata, cfg: TopologyConfig,
              compat: CompatibilityMatrix) -> set:
    """Mutual nearest neighbors across domain pairs: an edge exists only
    when two cells from distinct domains pick each other. With the
    compatibility restriction on (the default), candidates are further
    limited to species within the radius."""
    X = np.asarray(X.values if isinstance(X, FeatureMatrix) else X)
    domains = sorted(set(meta.domain))
    if len(domains) < 2:
        return set()
    by_domain = {d: np.array([i for i in range(meta.n_cells) if meta.domain[i] == d],
                             dtype=np.int64) for d in domains}
    species = meta.species_array()
    edges = set()
    for ai in range(len(domains)):
        for bi in range(ai + 1, len(domains)):
            A, B = by_domain[domains[ai]], by_domain[domains[bi]]
            ab = _directed_cross(X, meta, A, B, species, cfg, compat)
            ba = _directed_cross(X, meta, B, A, species, cfg, compat)
            for (i, j) in ab:
                if (j, i) in ba:
                    edges.add((min(i, j), max(i, j)))
    return edges


def _directed_cross(X, meta, Q, C, species, cfg, compat) -> set:
    """Top-k selections from each cell of Q into the candidate pool C,
    optionally restricted to compatible species."""
    if not cfg.align_respect_compatibility:
        return _directed_topk_pairs(X, Q, C, cfg.k_align, cfg.block_rows)
    pairs = set()
    for sq, q_members in _species_groups(meta, Q).items():
        cand_mask = np.array([compat.allows(sq, species[c]) for c in C], dtype=bool)
        cand = C[cand_mask]
        pairs |= _directed_topk_pairs(X, q_members, cand, cfg.k_align, cfg.block_rows)
    return pairs


def onto_edges(X, meta: CellMetadata, mask: SemanticMask,
               cfg: TopologyConfig) -> set:
    """Per Reference cell, top-k among mask-valid labeled Reference cells;
    selections are symmetrized into undirected edges."""
    X = np.asarray(X.values if isinstance(X, FeatureMatrix) else X)
    labeled = [i for i in range(meta.n_cells)
               if meta.split[i] is Split.REFERENCE and mask.labels[i] is not None]
    by_label = {}
    for i in labeled:
        by_label.setdefault(mask.labels[i], []).append(i)
    label_members = {l: np.array(v, dtype=np.int64) for l, v in by_label.items()}

    edges = set()
    skipped = 0
    for label in sorted(label_members):
        members = label_members[label]
        allowed = mask.allowed_labels(label)
        parts = [label_members[l] for l in sorted(allowed) if l in label_members]
        cand = np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64)
        if cand.size == 0:
            skipped += members.size
            continue
        # a cell whose only valid candidate is itself yields no pairs:
        # the kernel skips the self id and pads with -1
        for (i, j) in _directed_topk_pairs(X, members, cand, cfg.k_onto,
                                           cfg.block_rows):
            edges.add((min(i, j), max(i, j)))
    if skipped:
        logger.info("%d labeled cell(s) had no ontology-valid candidates", skipped)
    return edges


def phylo_edges(X, meta: CellMetadata, compat: CompatibilityMatrix,
                cfg: TopologyConfig) -> set:
    """Per cell, top-k among cells of different, radius-compatible species."""
    X = np.asarray(X.values if isinstance(X, FeatureMatrix) else X)
    groups = _species_groups(meta, range(meta.n_cells))
    if len(groups) < 2:
        return set()
    edges = set()
    for s, members in groups.items():
        cand_parts = [m for s2, m in groups.items()
                      if s2 != s and compat.allows(s, s2)]
        if not cand_parts:
            continue
        cand = np.sort(np.concatenate(cand_parts))
        for (i, j) in _directed_topk_pairs(X, members, cand, cfg.k_phy,
                                           cfg.block_rows):
            edges.add((min(i, j), max(i, j)))
    return edges


@dataclass
class GraphModels:
    """Everything fitted on the Reference set that Query projection and
    attachment need."""

    pca: object
    go: object | None
    mask: SemanticMask
    compat: CompatibilityMatrix
    feature_cfg: FeatureConfig
    topo_cfg: TopologyConfig
    similarity_space: str = "fused"

    def project(self, matrix_lognorm: ExpressionMatrix) -> FeatureMatrix:
        obs = self.pca.transform(matrix_lognorm)
        know = self.go.transform(matrix_lognorm) if self.go is not None else None
        return fuse(obs, know)


def build_graph(matrix: ExpressionMatrix, meta: CellMetadata,
                cell_dag: OntologyDag, tree: PhyloTree,
                ann, fcfg: FeatureConfig, tcfg: TopologyConfig,
                go_dag: OntologyDag | None = None):
    """Base-graph construction over the Reference cells.

    Takes the full (matrix, meta) pair, restricts itself to Reference
    cells, fits features on them, and unions the three prior-guided edge
    sets. Returns (CellGraph, GraphModels); Query cells are attached
    afterwards with attach_query. `matrix` may be Raw (it will be
    log-normalized) or already LogNormalized.
    """
    meta.validate_against(matrix)
    meta.validate_species(tree)

    lognorm = matrix if matrix.normalization_state is NormalizationState.LOG_NORMALIZED \
        else log_normalize(matrix, fcfg)

    ref_idx = np.flatnonzero(meta.reference_mask())
    if ref_idx.size == 0:
        raise DataError("no Reference cells; cannot build a base graph")
    m_ref = lognorm.subset_cells(ref_idx)
    meta_ref = meta.subset(ref_idx)

    pca_model = fit_pca(m_ref, fcfg)
    go_model = None
    if tcfg.enable_go:
        if ann is None or go_dag is None:
            raise ConfigError("GO view enabled but annotations or GO DAG missing")
        go_model = fit_go(m_ref, ann, go_dag, fcfg)

    mask = SemanticMask(cell_dag, meta_ref.cell_type, threshold=tcfg.co_threshold)
    delta = resolve_delta(tree, tcfg.delta)
    compat = compatibility(tree, sorted(set(meta.species)), delta)

    obs = pca_model.transform(m_ref)
    know = go_model.transform(m_ref) if go_model is not None else None
    H = fuse(obs, know)
    similarity_space = "fused" if go_model is not None else "observation"

    graph = CellGraph(meta_ref.cell_ids, node_features=H)
    if tcfg.enable_align:
        graph.add_edges(mnn_edges(H, meta_ref, tcfg, compat), Provenance.ALIGN)
    if tcfg.enable_onto:
        graph.add_edges(onto_edges(H, meta_ref, mask, tcfg), Provenance.ONTO)
    if tcfg.enable_phy:
        graph.add_edges(phylo_edges(H, meta_ref, compat, tcfg), Provenance.PHY)
    if graph.n_edges == 0:
        logger.warning("graph has no edges (all priors disabled or filtered out)")

    models = GraphModels(pca=pca_model, go=go_model, mask=mask, compat=compat,
                         feature_cfg=fcfg, topo_cfg=tcfg,
                         similarity_space=similarity_space)
    return graph, models


def attach_query(graph: CellGraph, ref_meta: CellMetadata,
                 X_query: FeatureMatrix, meta_query: CellMetadata,
                 cfg: TopologyConfig, compat: CompatibilityMatrix) -> CellGraph:
    """Attach each Query cell to its top-k most similar Reference cells of
    a compatible species. No semantic mask: labels are never consulted."""
    if graph.node_features is None:
        raise DataError("base graph carries no node features")
    n_ref = graph.n_cells
    for s in set(meta_query.species):
        if s not in compat:
            raise DataError(f"query cell species {s!r} unknown to the "
                            "compatibility matrix")

    H_ref = graph.node_features
    if X_query.dim != H_ref.dim:
        raise DataError("query feature dim does not match the base graph")

    merged = FeatureMatrix(np.vstack([H_ref.values, X_query.values]),
                           H_ref.view_tag, H_ref.column_labels)
    out = CellGraph(list(graph.cell_ids) + list(meta_query.cell_ids),
                    {k: set(v) for k, v in graph._edges.items()},
                    node_features=merged)

    ref_ids = np.arange(n_ref, dtype=np.int64)
    ref_species = ref_meta.species_array()
    pairs = []
    for sq, members in _species_groups(meta_query, range(meta_query.n_cells)).items():
        cand_mask = np.array([compat.allows(sq, s) for s in ref_species], dtype=bool)
        cand = ref_ids[cand_mask]
        if cand.size == 0:
            logger.warning("query species %r has no compatible reference cells", sq)
            continue
        global_members = members + n_ref
        picked = kernels.cosine_topk_ids(
            merged.values[global_members], global_members,
            H_ref.values[cand], cand, cfg.k_align, block_rows=cfg.block_rows)
        for r, q in enumerate(global_members):
            for c in picked[r]:
                if c >= 0:
                    pairs.append((int(c), int(q)))
    out.add_edges(pairs, Provenance.QUERY_ATTACH)
    return out
