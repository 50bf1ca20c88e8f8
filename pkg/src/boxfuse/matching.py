"""Minimum-cost bipartite matching (Hungarian algorithm with potentials)."""

from __future__ import annotations

import numpy as np


def _solve(c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting paths with potentials on an n x m matrix, n <= m.

    Returns the column of each row and the dual potentials u (rows), v (columns).
    """
    n, m = c.shape
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = c[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[p[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col[p[j] - 1] = j - 1
    return col, u[1:], v[1:]


def hungarian_match(cost) -> list[tuple[int, int]]:
    """Return ``min(M, K)`` (row, col) pairs with minimal total cost, sorted by row.

    Among equal-cost optima the lexicographically smallest one is returned:
    row 0 gets the smallest column it can take, then row 1, and so on, with
    "unassigned" ranking after every real column. Every optimal assignment
    uses only edges that are tight under the optimal dual, so the tie search
    costs nothing extra unless ties actually exist.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost must be a 2-d matrix, got shape {c.shape}")
    if c.size == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    rows, cols = c.shape
    size = max(rows, cols)
    sq = np.zeros((size, size))
    sq[:rows, :cols] = c
    col, u, v = _solve(sq)
    tol = 1e-9 * (1.0 + float(np.abs(sq).max()))
    tight = sq - u[:, None] - v[None, :] <= tol

    free = np.ones(size, dtype=bool)
    for i in range(size):
        rest_cost = sq[np.arange(i, size), col[i:]].sum()
        for j in np.flatnonzero(tight[i] & free):
            if j >= col[i]:
                break
            later = np.flatnonzero(free)
            later = later[later != j]
            sub = sq[i + 1 :][:, later]
            sub_col = _solve(sub)[0] if len(sub) else np.zeros(0, dtype=np.int64)
            if sq[i, j] + sub[np.arange(len(sub)), sub_col].sum() <= rest_cost + tol:
                col[i] = j
                col[i + 1 :] = later[sub_col]
                break
        free[col[i]] = False
    return [(i, int(col[i])) for i in range(rows) if col[i] < cols]


def assignment_cost(cost, pairs) -> float:
    c = np.asarray(cost, dtype=np.float64)
    return float(sum(c[i, j] for i, j in pairs))
