"""Graph-quality harnesses: stratified splits, label-propagation
classification, deterministic community detection, chance-adjusted
partition metrics, and the raw-vs-GO cross-species alignment analysis.

Two named substitutions apply throughout (also stamped into every
report): community detection is deterministic label propagation rather
than Leiden, and the classification probe is label propagation rather
than a trained GNN. Both keep the module boundary: any Partition producer
or classifier can be plugged in.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .errors import ConfigError, DataError
from .ingest.types import CellMetadata, ExpressionMatrix, Split
from .kernels import cosine_topk_ids
from .topology import CellGraph, Provenance
from .util import largest_remainder

logger = logging.getLogger(__name__)

SUBSTITUTION_NOTICES = (
    "clustering uses deterministic label-propagation community detection "
    "in place of Leiden",
    "classification uses a label-propagation probe in place of a trained "
    "GNN encoder",
)

SUPERVISED_RATIOS = (0.5, 0.2, 0.3)
ZERO_SHOT_SEEN_FRACTION = 0.6


class Assignment(str, Enum):
    TRAIN = "Train"
    VAL = "Val"
    TEST = "Test"
    SEEN = "Seen"
    UNSEEN = "Unseen"


@dataclass
class SplitPlan:
    mode: str                      # "supervised" | "zero_shot"
    assignment: dict               # cell_id -> Assignment
    ratios: tuple
    seed: int
    seen_types: tuple = ()
    unseen_types: tuple = ()

    def cells(self, which: Assignment) -> list:
        return [c for c, a in self.assignment.items() if a is which]

    def counts(self) -> dict:
        out = Counter(a.value for a in self.assignment.values())
        return dict(sorted(out.items()))


def make_split(meta: CellMetadata, mode: str, seed: int) -> SplitPlan:
    """Supervised: stratified 50/20/30 per cell type over labeled Reference
    cells. Zero-shot: 60% of the types (rounded toward Seen) are Seen, the
    rest Unseen; cells inherit their type's side."""
    rng = np.random.default_rng(seed)
    labeled = [i for i in range(meta.n_cells)
               if meta.split[i] is Split.REFERENCE and meta.cell_type[i] is not None]
    if not labeled:
        raise DataError("no labeled Reference cells to split")
    by_type = {}
    for i in labeled:
        by_type.setdefault(meta.cell_type[i], []).append(i)

    if mode == "supervised":
        assignment = {}
        for t in sorted(by_type):
            members = np.array(by_type[t], dtype=np.int64)
            if members.size < 3:
                logger.warning("type %r has %d cells (<3); all placed in Train",
                               t, members.size)
                for i in members:
                    assignment[meta.cell_ids[i]] = Assignment.TRAIN
                continue
            perm = rng.permutation(members)
            n_tr, n_va, n_te = largest_remainder(members.size, SUPERVISED_RATIOS)
            for i in perm[:n_tr]:
                assignment[meta.cell_ids[i]] = Assignment.TRAIN
            for i in perm[n_tr:n_tr + n_va]:
                assignment[meta.cell_ids[i]] = Assignment.VAL
            for i in perm[n_tr + n_va:]:
                assignment[meta.cell_ids[i]] = Assignment.TEST
        return SplitPlan("supervised", assignment, SUPERVISED_RATIOS, seed)

    if mode == "zero_shot":
        types = sorted(by_type)
        n_seen = min(len(types), math.ceil(ZERO_SHOT_SEEN_FRACTION * len(types)))
        perm = list(rng.permutation(np.array(types, dtype=object)))
        seen = set(perm[:n_seen])
        assignment = {}
        for t, members in by_type.items():
            side = Assignment.SEEN if t in seen else Assignment.UNSEEN
            for i in members:
                assignment[meta.cell_ids[i]] = side
        return SplitPlan("zero_shot", assignment,
                         (ZERO_SHOT_SEEN_FRACTION, 1 - ZERO_SHOT_SEEN_FRACTION),
                         seed, seen_types=tuple(sorted(seen)),
                         unseen_types=tuple(sorted(set(types) - seen)))

    raise ConfigError(f"unknown split mode {mode!r}")


def propagate_labels(graph: CellGraph, seed_labels: dict, max_iters: int = 50):
    """Synchronous clamped majority-vote propagation.

    seed_labels maps node index -> label and stays fixed. A node keeps its
    current label when it is among the majority candidates; otherwise ties
    break to the lexicographically smallest label. Nodes that never see a
    labeled neighbor fall back to the global majority seed label.
    """
    if not seed_labels:
        raise DataError("label propagation needs at least one labeled cell")
    n = graph.n_cells
    adj = graph.neighbors()
    labels = [None] * n
    for i, l in seed_labels.items():
        labels[i] = l
    clamped = set(seed_labels)
    for _ in range(max_iters):
        changed = False
        new = list(labels)
        for v in range(n):
            if v in clamped:
                continue
            counts = Counter(labels[u] for u in adj[v] if labels[u] is not None)
            if not counts:
                continue
            best = max(counts.values())
            winners = [l for l, c in counts.items() if c == best]
            if labels[v] in winners:
                continue
            pick = min(winners)
            new[v] = pick
            changed = True
        labels = new
        if not changed:
            break
    seed_counts = Counter(seed_labels.values())
    top = max(seed_counts.values())
    majority = min(l for l, c in seed_counts.items() if c == top)
    return [l if l is not None else majority for l in labels]


def label_propagation_classify(graph: CellGraph, meta: CellMetadata,
                               split: SplitPlan):
    """Train-clamped propagation; returns (predicted labels, Test accuracy)."""
    gindex = {cid: i for i, cid in enumerate(graph.cell_ids)}
    mindex = {cid: i for i, cid in enumerate(meta.cell_ids)}
    seeds = {gindex[cid]: meta.cell_type[mindex[cid]]
             for cid in split.cells(Assignment.TRAIN) if cid in gindex}
    predicted = propagate_labels(graph, seeds)
    test_ids = [cid for cid in split.cells(Assignment.TEST) if cid in gindex]
    if test_ids:
        correct = sum(predicted[gindex[cid]] == meta.cell_type[mindex[cid]]
                      for cid in test_ids)
        accuracy = correct / len(test_ids)
    else:
        accuracy = float("nan")
    return predicted, accuracy


@dataclass
class Partition:
    """Cluster id per cell; ids are plain integers."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise DataError("partition labels must be 1-D")

    @classmethod
    def from_labels(cls, seq) -> "Partition":
        uniq = sorted(set(seq), key=str)
        index = {l: i for i, l in enumerate(uniq)}
        return cls(np.array([index[l] for l in seq], dtype=np.int64))

    @property
    def n(self) -> int:
        return self.labels.size

    def n_clusters(self) -> int:
        return int(np.unique(self.labels).size)

    def subset(self, idx) -> "Partition":
        return Partition(self.labels[np.asarray(idx, dtype=np.int64)])


def cluster(graph: CellGraph, seed: int = 0, max_sweeps: int = 100) -> Partition:
    """Asynchronous label-propagation community detection with seeded node
    order and seeded tie-breaking. Isolated nodes stay singletons."""
    n = graph.n_cells
    adj = graph.neighbors()
    labels = np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for _ in range(max_sweeps):
        changed = False
        for v in rng.permutation(n):
            if not adj[v]:
                continue
            counts = Counter(int(labels[u]) for u in adj[v])
            best = max(counts.values())
            cands = sorted(l for l, c in counts.items() if c == best)
            if int(labels[v]) in cands:
                continue
            pick = cands[int(rng.integers(len(cands)))] if len(cands) > 1 else cands[0]
            labels[v] = pick
            changed = True
        if not changed:
            break
    # canonical ids in first-occurrence order
    remap, out = {}, np.empty(n, dtype=np.int64)
    for i, l in enumerate(labels):
        out[i] = remap.setdefault(int(l), len(remap))
    return Partition(out)


def _contingency(a: Partition, b: Partition):
    if a.n != b.n:
        raise DataError("partitions cover different cell sets")
    table = Counter(zip(a.labels.tolist(), b.labels.tolist()))
    row = Counter(a.labels.tolist())
    col = Counter(b.labels.tolist())
    return table, row, col


def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def ari(a: Partition, b: Partition) -> float:
    """Adjusted Rand index via the pair-counting contingency formula,
    evaluated in exact rational arithmetic."""
    table, row, col = _contingency(a, b)
    n = a.n
    total = _comb2(n)
    if total == 0:
        return 1.0
    sum_nij = sum(_comb2(c) for c in table.values())
    sum_a = sum(_comb2(c) for c in row.values())
    sum_b = sum(_comb2(c) for c in col.values())
    expected = Fraction(sum_a * sum_b, total)
    maximum = Fraction(sum_a + sum_b, 2)
    if maximum == expected:
        # both trivial in the same way (all-singletons or all-in-one)
        return 1.0
    return float((sum_nij - expected) / (maximum - expected))


def _entropy(counts, n: int) -> float:
    h = 0.0
    for c in counts.values():
        p = c / n
        h -= p * math.log(p)
    return h


def _mutual_information(table, row, col, n: int) -> float:
    mi = 0.0
    for (i, j), nij in table.items():
        mi += (nij / n) * math.log(n * nij / (row[i] * col[j]))
    return mi


def _expected_mi(row, col, n: int) -> float:
    """Hypergeometric expectation of the mutual information."""
    lg = math.lgamma
    logfact = [lg(x + 1) for x in range(n + 1)]
    emi = 0.0
    for ai in row.values():
        for bj in col.values():
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                log_p = (logfact[ai] + logfact[bj] + logfact[n - ai] + logfact[n - bj]
                         - logfact[n] - logfact[nij] - logfact[ai - nij]
                         - logfact[bj - nij] - logfact[n - ai - bj + nij])
                emi += (nij / n) * math.log(n * nij / (ai * bj)) * math.exp(log_p)
    return emi


def _same_partition(a: Partition, b: Partition) -> bool:
    """Identical co-clustering up to label renaming."""
    fwd, bwd = {}, {}
    for x, y in zip(a.labels.tolist(), b.labels.tolist()):
        if fwd.setdefault(x, y) != y or bwd.setdefault(y, x) != x:
            return False
    return True


def ami(a: Partition, b: Partition) -> float:
    """Adjusted mutual information, max-normalized.

    Identical partitions score exactly 1.0 (short-circuited; the float
    formula would land within one ulp of it). Degenerate conventions: two
    single-cluster partitions score 1.0; a single cluster against anything
    else scores 0.0.
    """
    table, row, col = _contingency(a, b)
    n = a.n
    if len(row) == 1 and len(col) == 1:
        return 1.0
    if len(row) == 1 or len(col) == 1:
        return 0.0
    if _same_partition(a, b):
        return 1.0
    mi = _mutual_information(table, row, col, n)
    emi = _expected_mi(row, col, n)
    h_max = max(_entropy(row, n), _entropy(col, n))
    denom = h_max - emi
    if abs(denom) < 1e-15:
        return 1.0 if abs(mi - emi) < 1e-15 else 0.0
    return (mi - emi) / denom


def accuracy_score(true_labels, predicted) -> float:
    true_labels, predicted = list(true_labels), list(predicted)
    if not true_labels:
        return float("nan")
    return sum(t == p for t, p in zip(true_labels, predicted)) / len(true_labels)


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Textbook two-pass Pearson correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DataError("pearson inputs differ in shape")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float((dx * dx).sum())
    syy = float((dy * dy).sum())
    if sxx == 0.0 or syy == 0.0:
        raise DataError("pearson undefined for a constant vector")
    return float((dx * dy).sum() / math.sqrt(sxx * syy))


def knn_baseline_graph(X, k: int, block_rows: int = 512) -> CellGraph:
    """Plain cosine kNN graph over all cells (no priors), symmetrized;
    the comparison baseline for graph-quality probes."""
    X = np.asarray(X.values if hasattr(X, "values") else X, dtype=np.float64)
    n = X.shape[0]
    ids = np.arange(n, dtype=np.int64)
    picked = cosine_topk_ids(X, ids, X, ids, k, block_rows=block_rows)
    graph = CellGraph([f"n{i}" for i in range(n)])
    pairs = []
    for i in range(n):
        for j in picked[i]:
            if j >= 0:
                pairs.append((min(i, int(j)), max(i, int(j))))
    graph.add_edges(pairs, Provenance.ALIGN)
    return graph


@dataclass
class CrossViewReport:
    """Per matched cell type, cross-species centroid correlation of the raw
    (log-normalized expression) view and the GO enrichment view."""

    per_type: list = field(default_factory=list)   # {type, raw_r, go_r, n_species}
    skipped_types: list = field(default_factory=list)
    raw_mean: float = float("nan")
    raw_sd: float = float("nan")
    go_mean: float = float("nan")
    go_sd: float = float("nan")
    variance_reduction_pct: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "per_type": self.per_type,
            "skipped_types": self.skipped_types,
            "raw_r": {"mean": self.raw_mean, "sd": self.raw_sd},
            "go_r": {"mean": self.go_mean, "sd": self.go_sd},
            "variance_reduction_pct": self.variance_reduction_pct,
        }

    def to_tsv(self, path) -> None:
        from pathlib import Path
        rows = ["cell_type\traw_r\tgo_r\tn_species\n"]
        for rec in self.per_type:
            rows.append(f"{rec['type']}\t{rec['raw_r']:.6f}\t{rec['go_r']:.6f}"
                        f"\t{rec['n_species']}\n")
        rows.append(f"summary\t{self.raw_mean:.6f}+/-{self.raw_sd:.6f}"
                    f"\t{self.go_mean:.6f}+/-{self.go_sd:.6f}\t-\n")
        Path(path).write_text("".join(rows), encoding="utf-8")


def cross_view_alignment(matrix_lognorm: ExpressionMatrix, features_go,
                         meta: CellMetadata, matched_types=None) -> CrossViewReport:
    """For each matched type, per-species centroids in the raw and GO views
    and the Pearson correlation between species; then mean +/- sd per view."""
    if len(set(meta.species)) < 2:
        raise DataError("cross-view alignment needs at least two species")
    labels = meta.cell_type
    types = sorted(matched_types) if matched_types is not None else \
        sorted({l for l in labels if l is not None})

    go_values = features_go.values if hasattr(features_go, "values") else \
        np.asarray(features_go)
    report = CrossViewReport()
    raw_rs, go_rs = [], []
    for t in types:
        cells_by_species = {}
        for i in range(meta.n_cells):
            if labels[i] == t:
                cells_by_species.setdefault(meta.species[i], []).append(i)
        if len(cells_by_species) < 2:
            report.skipped_types.append(t)
            logger.warning("type %r present in fewer than two species; skipped", t)
            continue
        cent_raw, cent_go = {}, {}
        for s, idx in sorted(cells_by_species.items()):
            idx = np.array(idx, dtype=np.int64)
            cent_raw[s] = np.asarray(matrix_lognorm.X[idx].mean(axis=0)).ravel()
            cent_go[s] = go_values[idx].mean(axis=0)
        pair_raw, pair_go = [], []
        species = sorted(cent_raw)
        for ai in range(len(species)):
            for bi in range(ai + 1, len(species)):
                sa, sb = species[ai], species[bi]
                try:
                    pair_raw.append(pearson(cent_raw[sa], cent_raw[sb]))
                    pair_go.append(pearson(cent_go[sa], cent_go[sb]))
                except DataError:
                    logger.warning("constant centroid for type %r (%s vs %s); "
                                   "pair skipped", t, sa, sb)
        if not pair_raw:
            report.skipped_types.append(t)
            continue
        rec = {"type": t, "raw_r": float(np.mean(pair_raw)),
               "go_r": float(np.mean(pair_go)), "n_species": len(species)}
        report.per_type.append(rec)
        raw_rs.append(rec["raw_r"])
        go_rs.append(rec["go_r"])

    if raw_rs:
        report.raw_mean = float(np.mean(raw_rs))
        report.raw_sd = float(np.std(raw_rs))
        report.go_mean = float(np.mean(go_rs))
        report.go_sd = float(np.std(go_rs))
        raw_var = report.raw_sd ** 2
        if raw_var > 0:
            report.variance_reduction_pct = 100.0 * (1.0 - report.go_sd ** 2 / raw_var)
    return report


REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["tasks", "seeds", "config_hash", "substitutions"],
    "additionalProperties": False,
    "properties": {
        "tasks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "supervised": {
                    "type": "object",
                    "required": ["accuracy", "split_counts"],
                    "properties": {
                        "accuracy": {"type": "number"},
                        "split_counts": {"type": "object"},
                    },
                },
                "zero_shot": {
                    "type": "object",
                    "required": ["ari_unseen", "ami_unseen", "seen_types",
                                 "unseen_types"],
                    "properties": {
                        "ari_unseen": {"type": "number"},
                        "ami_unseen": {"type": "number"},
                        "seen_types": {"type": "array"},
                        "unseen_types": {"type": "array"},
                        "n_unseen_cells": {"type": "integer"},
                    },
                },
                "clustering": {
                    "type": "object",
                    "required": ["ari", "ami", "n_clusters"],
                    "properties": {
                        "ari": {"type": "number"},
                        "ami": {"type": "number"},
                        "n_clusters": {"type": "integer"},
                    },
                },
                "cross_view": {"type": "object"},
            },
        },
        "seeds": {"type": "object"},
        "config_hash": {"type": "string"},
        "substitutions": {"type": "array", "items": {"type": "string"}},
    },
}
