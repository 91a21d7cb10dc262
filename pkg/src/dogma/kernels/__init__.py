"""Cosine top-k search kernels.

The blocked driver computes similarity blocks with BLAS (shared by both
backends, so results are bit-identical) and delegates the per-row top-k
selection to either the compiled Cython kernel or the numpy fallback.
The backend is chosen once at import: compiled if available, overridable
with DOGMA_KERNEL=c or DOGMA_KERNEL=py.

Selection contract (both backends): rank candidates by cosine similarity
descending, ties broken by lower candidate id; a candidate equal to the
row's own id is skipped; rows shorter than k are padded with -1. Rows or
candidates with zero norm get similarity -1 to everything.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from ..errors import ConfigError
from . import _select_py

logger = logging.getLogger(__name__)

try:
    from . import _select as _select_c
except ImportError:  # pure-Python install
    _select_c = None


def _pick_backend():
    forced = os.environ.get("DOGMA_KERNEL", "").strip().lower()
    if forced in ("py", "python"):
        return _select_py, "python"
    if forced in ("c", "cy", "cython"):
        if _select_c is None:
            raise ConfigError(
                "DOGMA_KERNEL requests the compiled kernel but it is not built")
        return _select_c, "cython"
    if forced:
        raise ConfigError(f"unknown DOGMA_KERNEL value {forced!r} (use 'c' or 'py')")
    if _select_c is not None:
        return _select_c, "cython"
    logger.info("compiled selection kernel not available; using numpy fallback")
    return _select_py, "python"


_BACKEND, BACKEND_NAME = _pick_backend()


def backend_name() -> str:
    return BACKEND_NAME


def available_backends():
    """(name, module) pairs for every importable backend; used by tests
    and the benchmark."""
    out = [("python", _select_py)]
    if _select_c is not None:
        out.append(("cython", _select_c))
    return out


def unit_rows(X: np.ndarray):
    """Row-normalize to unit length. Zero-norm rows are left at zero and
    flagged; callers force their similarities to -1."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    norms = np.sqrt((X * X).sum(axis=1))
    zero = norms == 0.0
    scale = np.where(zero, 1.0, norms)
    return X / scale[:, None], zero


def topk_ids(sims, query_ids, cand_ids, k, select=None) -> np.ndarray:
    """Select top-k candidate ids per similarity row. `select` overrides the
    import-time backend (tests and the benchmark pass it explicitly)."""
    mod = select if select is not None else _BACKEND
    sims = np.ascontiguousarray(sims, dtype=np.float64)
    query_ids = np.ascontiguousarray(query_ids, dtype=np.int64)
    cand_ids = np.ascontiguousarray(cand_ids, dtype=np.int64)
    return mod.topk_ids(sims, query_ids, cand_ids, int(k))


def cosine_topk_ids(Xq, query_ids, Xc, cand_ids, k,
                    block_rows: int = 512, select=None) -> np.ndarray:
    """Blocked exact cosine top-k: for each row of Xq, the k best rows of Xc.

    Returns an (n_queries, k) int64 array of candidate ids, -1 padded.
    cand_ids must be strictly ascending so positional ties equal id ties.
    """
    query_ids = np.ascontiguousarray(query_ids, dtype=np.int64)
    cand_ids = np.ascontiguousarray(cand_ids, dtype=np.int64)
    if cand_ids.size > 1 and not (np.diff(cand_ids) > 0).all():
        raise ValueError("cand_ids must be strictly ascending")
    nq = query_ids.shape[0]
    out = np.full((nq, int(k)), -1, dtype=np.int64)
    if nq == 0 or cand_ids.size == 0:
        return out
    Xqn, qzero = unit_rows(Xq)
    Xcn, czero = unit_rows(Xc)
    have_zero_cand = bool(czero.any())
    for start in range(0, nq, block_rows):
        stop = min(start + block_rows, nq)
        S = Xqn[start:stop] @ Xcn.T
        if have_zero_cand:
            S[:, czero] = -1.0
        zq = qzero[start:stop]
        if zq.any():
            S[zq, :] = -1.0
        out[start:stop] = topk_ids(S, query_ids[start:stop], cand_ids, k,
                                   select=select)
    return out
