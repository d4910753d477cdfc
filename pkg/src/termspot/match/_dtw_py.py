"""Pure-numpy subsequence-DTW kernel, the fallback when the compiled
extension is unavailable.

Sweeps anti-diagonals so every cell's three predecessors live on already
finished diagonals; per-cell arithmetic and tie-breaking are then identical
to the compiled scalar kernel (same operands, same order), so both kernels
return bit-identical results.
"""

import numpy as np


def dtw_scan(cost: np.ndarray, lam: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """One relaxation pass over a local-cost matrix (query x utterance frames).

    Runs the min-cost recurrence on shifted costs c(i,j) - lam with a free
    start on the utterance axis (row 0 cells open a new path) and
    predecessor tie-break diagonal over vertical over horizontal:

        D(i,j) = c(i,j) - lam + min(D(i-1,j-1), D(i-1,j), D(i,j-1))

    Companion matrices carry, along each chosen path, the unshifted cost
    sum, the number of local-cost accumulations, and the start column.
    Returns per end column j: (shifted cost D, cost sum, path length,
    start column). With lam=0 this is the plain path-length-normalized
    subsequence DTW candidate scan; the caller iterates lam to reach the
    exact minimum of cost/length over all paths.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    m, n = cost.shape
    if m == 1:
        shifted = cost[0] - lam
        return shifted, cost[0].copy(), np.ones(n, dtype=np.int64), np.arange(n, dtype=np.int64)

    d_out = np.empty(n, dtype=np.float64)
    c_out = np.empty(n, dtype=np.float64)
    l_out = np.empty(n, dtype=np.int64)
    s_out = np.empty(n, dtype=np.int64)
    inf = np.inf
    d_prev2 = np.full(m, inf)
    d_prev = np.full(m, inf)
    c_prev2 = np.zeros(m)
    c_prev = np.zeros(m)
    l_prev2 = np.zeros(m, dtype=np.int64)
    l_prev = np.zeros(m, dtype=np.int64)
    s_prev2 = np.zeros(m, dtype=np.int64)
    s_prev = np.zeros(m, dtype=np.int64)

    for k in range(m + n - 1):
        i_lo = max(0, k - (n - 1))
        i_hi = min(m - 1, k)
        d_cur = np.full(m, inf)
        c_cur = np.zeros(m)
        l_cur = np.zeros(m, dtype=np.int64)
        s_cur = np.zeros(m, dtype=np.int64)
        if i_lo == 0:
            d_cur[0] = cost[0, k] - lam
            c_cur[0] = cost[0, k]
            l_cur[0] = 1
            s_cur[0] = k
        first = max(1, i_lo)
        if first <= i_hi:
            ii = np.arange(first, i_hi + 1)
            jj = k - ii
            best = d_prev2[ii - 1].copy()
            csum = c_prev2[ii - 1].copy()
            length = l_prev2[ii - 1].copy()
            spath = s_prev2[ii - 1].copy()
            vert = d_prev[ii - 1]
            take = vert < best
            best[take] = vert[take]
            csum[take] = c_prev[ii - 1][take]
            length[take] = l_prev[ii - 1][take]
            spath[take] = s_prev[ii - 1][take]
            horiz = d_prev[ii]
            take = horiz < best
            best[take] = horiz[take]
            csum[take] = c_prev[ii][take]
            length[take] = l_prev[ii][take]
            spath[take] = s_prev[ii][take]
            local = cost[ii, jj]
            d_cur[ii] = (local - lam) + best
            c_cur[ii] = local + csum
            l_cur[ii] = length + 1
            s_cur[ii] = spath
        if k >= m - 1:
            j = k - (m - 1)
            d_out[j] = d_cur[m - 1]
            c_out[j] = c_cur[m - 1]
            l_out[j] = l_cur[m - 1]
            s_out[j] = s_cur[m - 1]
        d_prev2, d_prev = d_prev, d_cur
        c_prev2, c_prev = c_prev, c_cur
        l_prev2, l_prev = l_prev, l_cur
        s_prev2, s_prev = s_prev, s_cur

    return d_out, c_out, l_out, s_out
