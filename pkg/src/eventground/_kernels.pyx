# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Same signatures as ``eventground._fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def voxelize_counts(const cnp.int64_t[:] x, const cnp.int64_t[:] y,
                    const cnp.int64_t[:] t, const cnp.int8_t[:] p,
                    cnp.int64_t t_a, cnp.int64_t t_b, Py_ssize_t bins,
                    Py_ssize_t height, Py_ssize_t width):
    cdef cnp.ndarray[cnp.int64_t, ndim=4] out = np.zeros((2, bins, height, width), dtype=np.int64)
    cdef cnp.int64_t[:, :, :, ::1] grid = out
    cdef Py_ssize_t k, n = t.shape[0], tau, ch
    cdef cnp.int64_t span = t_b - t_a, tk
    for k in range(n):
        tk = t[k]
        if tk < t_a or tk > t_b:
            continue
        tau = <Py_ssize_t>(((tk - t_a) * bins) // span)
        if tau >= bins:
            tau = bins - 1
        ch = 1 if p[k] > 0 else 0
        grid[ch, tau, y[k], x[k]] += 1
    return out


def hungarian(double[:, :] cost):
    """Min-cost assignment of every row to a distinct column (rows <= cols).

    Shortest-augmenting-path Kuhn-Munkres with row/column potentials.
    Returns an int64 array ``col_of_row``.
    """
    cdef Py_ssize_t n = cost.shape[0], m = cost.shape[1]
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(m + 1)
    minv_arr = np.empty(m + 1)
    p_arr = np.zeros(m + 1, dtype=np.intp)
    way_arr = np.zeros(m + 1, dtype=np.intp)
    used_arr = np.zeros(m + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr, v = v_arr, minv = minv_arr
    cdef Py_ssize_t[::1] pp = p_arr, way = way_arr
    cdef unsigned char[::1] used = used_arr
    for i in range(1, n + 1):
        pp[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = pp[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[pp[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if pp[j0] == 0:
                break
        while True:
            j1 = way[j0]
            pp[j0] = pp[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    for j in range(1, m + 1):
        if pp[j] != 0:
            res[pp[j] - 1] = j - 1
    return out


def levenshtein(str a, str b):
    cdef Py_ssize_t la = len(a), lb = len(b), r, c
    cdef Py_ssize_t sub, ins, dele, best
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev_arr = np.arange(lb + 1, dtype=np.intp)
    cur_arr = np.zeros(lb + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] prev = prev_arr, cur = cur_arr, tmp
    for r in range(1, la + 1):
        cur[0] = r
        for c in range(1, lb + 1):
            sub = prev[c - 1] + (0 if a[r - 1] == b[c - 1] else 1)
            ins = cur[c - 1] + 1
            dele = prev[c] + 1
            best = sub
            if ins < best:
                best = ins
            if dele < best:
                best = dele
            cur[c] = best
        tmp = prev
        prev = cur
        cur = tmp
    return prev[lb]
