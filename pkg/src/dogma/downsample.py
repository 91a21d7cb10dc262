"""Stratified downsampling that never empties a stratum, so rare
populations survive. Query cells pass through untouched; only Reference
cells are stratified and sampled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DataError
from .ingest.types import CellMetadata, ExpressionMatrix, Split
from .util import largest_remainder

logger = logging.getLogger(__name__)


class StratifyKey(str, Enum):
    CELL_TYPE = "CellType"
    CELL_TYPE_X_DOMAIN = "CellTypexDomain"


@dataclass
class DownsampleConfig:
    target_total: int
    stratify_key: StratifyKey = StratifyKey.CELL_TYPE
    min_per_stratum: int = 10
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.stratify_key, str):
            self.stratify_key = StratifyKey(self.stratify_key)
        if self.target_total < 0:
            raise ConfigError("target_total must be >= 0")
        if self.min_per_stratum < 1:
            raise ConfigError("min_per_stratum must be >= 1")


def _stratum_key(meta: CellMetadata, i: int, key: StratifyKey):
    if key is StratifyKey.CELL_TYPE:
        return (meta.cell_type[i],)
    return (meta.cell_type[i], meta.domain[i])


def stratified_downsample(matrix: ExpressionMatrix, meta: CellMetadata,
                          cfg: DownsampleConfig):
    """Keep min(size, max(min_per_stratum, proportional share)) cells per
    stratum; shares come from largest-remainder apportionment of
    target_total. Returns (matrix, meta, kept_cell_ids)."""
    meta.validate_against(matrix)

    ref_idx = [i for i in range(meta.n_cells) if meta.split[i] is Split.REFERENCE]
    query_idx = [i for i in range(meta.n_cells) if meta.split[i] is Split.QUERY]
    for i in ref_idx:
        if meta.cell_type[i] is None:
            raise DataError(
                f"Reference cell {meta.cell_ids[i]!r} lacks a cell_type; "
                "strata are undefined")

    if cfg.target_total >= len(ref_idx):
        logger.warning("downsample target %d >= %d available reference cells; "
                       "keeping everything", cfg.target_total, len(ref_idx))
        kept = sorted(ref_idx + query_idx)
        return matrix, meta, [meta.cell_ids[i] for i in kept]

    strata = {}
    for i in ref_idx:
        strata.setdefault(_stratum_key(meta, i, cfg.stratify_key), []).append(i)
    keys = sorted(strata, key=lambda k: tuple(str(x) for x in k))
    sizes = [len(strata[k]) for k in keys]

    floor = min(cfg.min_per_stratum, min(sizes))
    if cfg.target_total < len(keys) * floor:
        raise ConfigError(
            f"target_total {cfg.target_total} is below the stratum floor "
            f"{len(keys)} x {floor}")

    shares = largest_remainder(cfg.target_total, sizes)
    rng = np.random.default_rng(cfg.seed)
    selected = []
    for key, size, share in zip(keys, sizes, shares):
        keep = min(size, max(cfg.min_per_stratum, share, 1))
        members = np.array(strata[key], dtype=np.int64)
        if keep >= size:
            chosen = members
        else:
            chosen = rng.choice(members, size=keep, replace=False)
        selected.extend(chosen.tolist())

    kept = sorted(selected + query_idx)
    kept_ids = [meta.cell_ids[i] for i in kept]
    return matrix.subset_cells(kept), meta.subset(kept), kept_ids
