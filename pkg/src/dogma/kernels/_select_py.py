"""Pure-Python (numpy) fallback for the top-k selection kernel.

A stable argsort on negated similarities yields exactly the
(similarity descending, candidate id ascending) order of the compiled
kernel, because candidate ids are passed in ascending order.
"""

from __future__ import annotations

import numpy as np


def topk_ids(sims: np.ndarray, query_ids: np.ndarray,
             cand_ids: np.ndarray, k: int) -> np.ndarray:
    nq, nc = sims.shape
    if query_ids.shape[0] != nq:
        raise ValueError("query_ids length does not match sims rows")
    if cand_ids.shape[0] != nc:
        raise ValueError("cand_ids length does not match sims columns")
    if k <= 0:
        raise ValueError("k must be positive")

    out = np.full((nq, k), -1, dtype=np.int64)
    order = np.argsort(-sims, axis=1, kind="stable")
    ranked = cand_ids[order]
    for r in range(nq):
        ids = ranked[r]
        ids = ids[ids != query_ids[r]][:k]
        out[r, : ids.size] = ids
    return out
