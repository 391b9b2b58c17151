# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled decoding and statistics kernels.

Mirrors ``_pykernels`` exactly, including tie-breaking (first maximum).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


cdef int _find_cycle(long[::1] heads, long[::1] out):
    """Write the sorted cycle members into ``out``; return their count (0 if none)."""
    cdef Py_ssize_t n = heads.shape[0], start, v, u, k = 0, i, j
    cdef long tmp
    cdef long[::1] color = np.zeros(n, dtype=np.int_)
    color[0] = 2
    for start in range(1, n):
        v = start
        while color[v] == 0:
            color[v] = 1
            v = heads[v]
        if color[v] == 1:
            out[k] = v
            k += 1
            u = heads[v]
            while u != v:
                out[k] = u
                k += 1
                u = heads[u]
            for i in range(1, k):
                tmp = out[i]
                j = i - 1
                while j >= 0 and out[j] > tmp:
                    out[j + 1] = out[j]
                    j -= 1
                out[j + 1] = tmp
            return <int>k
        v = start
        while color[v] == 1:
            color[v] = 2
            v = heads[v]
    return 0


cdef long[::1] _mst(double[:, ::1] scores):
    cdef Py_ssize_t n = scores.shape[0], d, h, i, j, m, c, k, best
    cdef double bv, val
    cdef long[::1] heads = np.empty(n, dtype=np.int_)
    heads[0] = -1
    for d in range(1, n):
        best = 0
        bv = scores[d, 0]
        for h in range(1, n):
            if scores[d, h] > bv:
                bv = scores[d, h]
                best = h
        heads[d] = best

    cdef long[::1] cyc_buf = np.empty(n, dtype=np.int_)
    cdef int clen = _find_cycle(heads, cyc_buf)
    if clen == 0:
        return heads

    cdef char[::1] in_cycle = np.zeros(n, dtype=np.int8)
    for i in range(clen):
        in_cycle[cyc_buf[i]] = 1
    m = n - clen
    c = m
    cdef long[::1] rest = np.empty(m, dtype=np.int_)
    k = 0
    for i in range(n):
        if not in_cycle[i]:
            rest[k] = i
            k += 1

    cdef double[:, ::1] reduced = np.full((m + 1, m + 1), -INFINITY)
    cdef long[::1] best_head = np.zeros(m, dtype=np.int_)
    cdef long[::1] best_dep = np.zeros(m, dtype=np.int_)
    cdef double[::1] kept = np.empty(clen, dtype=np.float64)
    for k in range(clen):
        kept[k] = scores[cyc_buf[k], heads[cyc_buf[k]]]

    for i in range(1, m):
        for j in range(m):
            if i != j:
                reduced[i, j] = scores[rest[i], rest[j]]
        best = 0
        bv = scores[rest[i], cyc_buf[0]]
        for k in range(1, clen):
            val = scores[rest[i], cyc_buf[k]]
            if val > bv:
                bv = val
                best = k
        best_head[i] = best
        reduced[i, c] = bv
    for j in range(m):
        best = 0
        bv = scores[cyc_buf[0], rest[j]] - kept[0]
        for k in range(1, clen):
            val = scores[cyc_buf[k], rest[j]] - kept[k]
            if val > bv:
                bv = val
                best = k
        best_dep[j] = best
        reduced[c, j] = bv

    cdef long[::1] sub = _mst(reduced)
    cdef long[::1] result = np.empty(n, dtype=np.int_)
    result[:] = heads
    for i in range(1, m):
        h = sub[i]
        if h == c:
            result[rest[i]] = cyc_buf[best_head[i]]
        else:
            result[rest[i]] = rest[h]
    h = sub[c]
    result[cyc_buf[best_dep[h]]] = rest[h]
    return result


cdef double _tree_score(double[:, ::1] scores, long[::1] heads):
    cdef double total = 0.0
    cdef Py_ssize_t d
    for d in range(1, heads.shape[0]):
        total += scores[d, heads[d]]
    return total


def chu_liu_edmonds(arc_scores, bint single_root=True):
    cdef double[:, ::1] arc = np.ascontiguousarray(arc_scores, dtype=np.float64)
    cdef Py_ssize_t n = arc.shape[0], d, h, r, roots
    cdef double[:, ::1] scores = np.full((n + 1, n + 1), -INFINITY)
    for d in range(n):
        for h in range(n + 1):
            if h != d + 1:
                scores[d + 1, h] = arc[d, h]
    cdef long[::1] heads = _mst(scores)
    roots = 0
    for d in range(1, n + 1):
        if heads[d] == 0:
            roots += 1
    if not single_root or n == 1 or roots == 1:
        return np.asarray(heads[1:]).astype(np.int64)

    cdef double[:, ::1] constrained = np.empty((n + 1, n + 1))
    cdef long[::1] cand
    cdef long[::1] best = None
    cdef double s, best_score = -INFINITY
    for r in range(1, n + 1):
        if scores[r, 0] == -INFINITY:
            continue
        constrained[:, :] = scores
        for d in range(1, n + 1):
            if d != r:
                constrained[d, 0] = -INFINITY
        cand = _mst(constrained)
        # score under the constraint: a forced fallback onto a removed root arc counts as -inf
        s = _tree_score(constrained, cand)
        if best is None or s > best_score:
            best = cand
            best_score = s
    if best is None:
        best = heads
    return np.asarray(best[1:]).astype(np.int64)


def count_nonprojective(heads_in):
    cdef long[::1] heads = np.ascontiguousarray(heads_in, dtype=np.int_)
    cdef Py_ssize_t n = heads.shape[0], a, b, count = 0
    cdef long alo, ahi, blo, bhi
    for a in range(n):
        if heads[a] == 0:
            continue
        alo = min(heads[a], a + 1)
        ahi = max(heads[a], a + 1)
        for b in range(n):
            if b == a or heads[b] == 0:
                continue
            blo = min(heads[b], b + 1)
            bhi = max(heads[b], b + 1)
            if (alo < blo < ahi < bhi) or (blo < alo < bhi < ahi):
                count += 1
                break
    return count
