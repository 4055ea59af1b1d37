"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def voxelize_counts(x, y, t, p, t_a, t_b, bins, height, width):
    t = np.asarray(t, dtype=np.int64)
    keep = (t >= t_a) & (t <= t_b)
    tk = t[keep]
    tau = ((tk - t_a) * bins) // (t_b - t_a)
    np.minimum(tau, bins - 1, out=tau)
    ch = (np.asarray(p)[keep] > 0).astype(np.int64)
    flat = ((ch * bins + tau) * height + np.asarray(y, dtype=np.int64)[keep]) * width
    flat += np.asarray(x, dtype=np.int64)[keep]
    counts = np.bincount(flat, minlength=2 * bins * height * width)
    return counts.astype(np.int64).reshape(2, bins, height, width)


def hungarian(cost):
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    rows = cost.tolist()
    inf = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = rows[i0 - 1]
            ui = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    out = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            out[p[j] - 1] = j - 1
    return out


def levenshtein(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for r, ca in enumerate(a, 1):
        cur = [r]
        for c, cb in enumerate(b, 1):
            cur.append(min(prev[c - 1] + (ca != cb), cur[c - 1] + 1, prev[c] + 1))
        prev = cur
    return prev[-1]
