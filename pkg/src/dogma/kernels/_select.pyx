# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled top-k selection over a block of similarity rows.

Candidates are ranked by (similarity descending, candidate id ascending);
a candidate whose id equals the row's query id is skipped. Must stay
behaviourally identical to dogma.kernels._select_py.
"""

from libc.stdint cimport int64_t

import numpy as np


def topk_ids(double[:, ::1] sims, int64_t[::1] query_ids,
             int64_t[::1] cand_ids, int k):
    cdef Py_ssize_t nq = sims.shape[0]
    cdef Py_ssize_t nc = sims.shape[1]
    if query_ids.shape[0] != nq:
        raise ValueError("query_ids length does not match sims rows")
    if cand_ids.shape[0] != nc:
        raise ValueError("cand_ids length does not match sims columns")
    if k <= 0:
        raise ValueError("k must be positive")

    out_arr = np.full((nq, k), -1, dtype=np.int64)
    cdef int64_t[:, ::1] out = out_arr
    best_s_arr = np.empty(k, dtype=np.float64)
    best_i_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] best_s = best_s_arr
    cdef int64_t[::1] best_i = best_i_arr

    cdef Py_ssize_t r, c, m, p, q
    cdef double s
    cdef int64_t qid, cid

    for r in range(nq):
        qid = query_ids[r]
        m = 0
        for c in range(nc):
            cid = cand_ids[c]
            if cid == qid:
                continue
            s = sims[r, c]
            if m == k:
                # full list: only a strictly better score displaces the worst,
                # so equal scores keep the earlier (lower) candidate id
                if s <= best_s[k - 1]:
                    continue
                p = k - 1
            else:
                p = m
                m += 1
            while p > 0 and best_s[p - 1] < s:
                best_s[p] = best_s[p - 1]
                best_i[p] = best_i[p - 1]
                p -= 1
            best_s[p] = s
            best_i[p] = cid
        for q in range(m):
            out[r, q] = best_i[q]
    return out_arr
