"""Quality-control filters: sparse genes out first, then cells by
mitochondrial fraction and total-count percentiles.

Percentiles use the nearest-rank definition on sorted totals and are
computed once on the input distribution, never recomputed after removal.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .ingest.types import CellMetadata, ExpressionMatrix, NormalizationState

logger = logging.getLogger(__name__)


@dataclass
class QcConfig:
    min_cells_per_gene: int = 3
    mito_fraction_max: float = 0.05
    mito_gene_prefix: str = "MT-"
    count_percentile_low: float = 5.0
    count_percentile_high: float = 95.0

    def __post_init__(self):
        if not (0 <= self.count_percentile_low < self.count_percentile_high <= 100):
            raise ConfigError("percentiles must satisfy 0 <= low < high <= 100")
        if not (0.0 <= self.mito_fraction_max <= 1.0):
            raise ConfigError("mito_fraction_max must lie in [0, 1]")
        if self.min_cells_per_gene < 0:
            raise ConfigError("min_cells_per_gene must be >= 0")


@dataclass
class QcReport:
    genes_in: int = 0
    genes_removed: int = 0
    cells_in: int = 0
    cells_removed_mito: int = 0
    cells_removed_counts: int = 0
    cells_removed_total: int = 0
    mito_filter_skipped: bool = False
    mito_fraction_max: float = 0.0
    count_low_threshold: float = 0.0
    count_high_threshold: float = 0.0
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "genes": {"in": self.genes_in, "removed": self.genes_removed},
            "cells": {
                "in": self.cells_in,
                "removed_mito": self.cells_removed_mito,
                "removed_counts": self.cells_removed_counts,
                "removed_total": self.cells_removed_total,
            },
            "thresholds": {
                "mito_fraction_max": self.mito_fraction_max,
                "count_low": self.count_low_threshold,
                "count_high": self.count_high_threshold,
            },
            "mito_filter_skipped": self.mito_filter_skipped,
            "notes": list(self.notes),
        }


def nearest_rank_percentile(sorted_values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile of an ascending-sorted array."""
    n = sorted_values.size
    if n == 0:
        raise DataError("percentile of an empty distribution")
    rank = max(1, math.ceil(pct / 100.0 * n))
    rank = min(rank, n)
    return float(sorted_values[rank - 1])


def filter_genes(matrix: ExpressionMatrix, cfg: QcConfig,
                 report: QcReport | None = None) -> ExpressionMatrix:
    """Drop genes with nonzero expression in fewer than min_cells_per_gene
    cells. Cell set and relative gene order are preserved."""
    if matrix.normalization_state is not NormalizationState.RAW:
        raise DataError("gene filter requires a Raw matrix")
    counts = matrix.gene_nonzero_cells()
    keep = np.flatnonzero(counts >= cfg.min_cells_per_gene)
    if keep.size == 0:
        raise DataError("empty feature space: no gene passes the QC filter")
    if report is not None:
        report.genes_in = matrix.n_genes
        report.genes_removed = matrix.n_genes - keep.size
    if keep.size == matrix.n_genes:
        return matrix
    return matrix.subset_genes(keep)


def mito_gene_mask(matrix: ExpressionMatrix, prefix: str) -> np.ndarray:
    p = prefix.lower()
    return np.array([g.lower().startswith(p) for g in matrix.gene_ids], dtype=bool)


def cell_filter_thresholds(matrix: ExpressionMatrix, cfg: QcConfig):
    """Absolute thresholds from the input distribution: (mito_max, low, high).
    Exposed separately so re-application with frozen values is possible."""
    totals = matrix.cell_totals()
    s = np.sort(totals)
    low = nearest_rank_percentile(s, cfg.count_percentile_low)
    high = nearest_rank_percentile(s, cfg.count_percentile_high)
    return cfg.mito_fraction_max, low, high


def apply_cell_filters(matrix: ExpressionMatrix, meta: CellMetadata,
                       mito_max: float, count_low: float, count_high: float,
                       mito_prefix: str = "MT-",
                       report: QcReport | None = None):
    """Apply fixed absolute thresholds (idempotent by construction)."""
    totals = matrix.cell_totals()
    mito = mito_gene_mask(matrix, mito_prefix)
    if not mito.any():
        if report is not None:
            report.mito_filter_skipped = True
            report.notes.append(
                f"no gene matches mito prefix {mito_prefix!r}; mito filter skipped")
        logger.warning("no gene matches mito prefix %r; mito filter skipped",
                       mito_prefix)
        mito_frac = np.zeros(matrix.n_cells)
    else:
        mito_counts = np.asarray(matrix.X[:, np.flatnonzero(mito)].sum(axis=1)).ravel()
        with np.errstate(invalid="ignore"):
            mito_frac = np.where(totals > 0, mito_counts / np.where(totals > 0, totals, 1.0), 0.0)
    ok_mito = mito_frac <= mito_max
    ok_counts = (totals >= count_low) & (totals <= count_high)
    keep = np.flatnonzero(ok_mito & ok_counts)
    if keep.size == 0:
        raise DataError("no cell passes the QC filters")
    if report is not None:
        report.cells_in = matrix.n_cells
        report.cells_removed_mito = int((~ok_mito).sum())
        report.cells_removed_counts = int((~ok_counts).sum())
        report.cells_removed_total = matrix.n_cells - keep.size
        report.mito_fraction_max = mito_max
        report.count_low_threshold = count_low
        report.count_high_threshold = count_high
    if keep.size == matrix.n_cells:
        return matrix, meta
    return matrix.subset_cells(keep), meta.subset(keep)


def filter_cells(matrix: ExpressionMatrix, meta: CellMetadata, cfg: QcConfig,
                 report: QcReport | None = None):
    """Mito-fraction cap plus inclusive [P_low, P_high] total-count window."""
    if matrix.normalization_state is not NormalizationState.RAW:
        raise DataError("cell filter requires a Raw matrix")
    meta.validate_against(matrix)
    mito_max, low, high = cell_filter_thresholds(matrix, cfg)
    return apply_cell_filters(matrix, meta, mito_max, low, high,
                              mito_prefix=cfg.mito_gene_prefix, report=report)


def run_qc(matrix: ExpressionMatrix, meta: CellMetadata, cfg: QcConfig):
    """Gene filter first, then cell filter; returns (matrix, meta, report)."""
    report = QcReport()
    matrix = filter_genes(matrix, cfg, report=report)
    matrix, meta = filter_cells(matrix, meta, cfg, report=report)
    return matrix, meta, report
