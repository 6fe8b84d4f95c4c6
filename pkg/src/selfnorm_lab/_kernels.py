"""Row-wise compensated reductions shared by the single-sample and batch paths.

Both paths go through these kernels so that one replication evaluated on its
own and the same replication inside a batch agree bit-for-bit.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True, inline="always")
def _neumaier_add(s, comp, v):
    t = s + v
    if abs(s) >= abs(v):
        comp += (s - t) + v
    else:
        comp += (v - t) + s
    return t, comp


@nb.njit(cache=True, nogil=True)
def row_sum_and_squares(x):
    """Return (sum, sum of squares) of every row, Neumaier-compensated."""
    rows, cols = x.shape
    s_out = np.empty(rows)
    q_out = np.empty(rows)
    for r in range(rows):
        s = 0.0
        cs = 0.0
        q = 0.0
        cq = 0.0
        for c in range(cols):
            v = x[r, c]
            s, cs = _neumaier_add(s, cs, v)
            q, cq = _neumaier_add(q, cq, v * v)
        s_out[r] = s + cs
        q_out[r] = q + cq
    return s_out, q_out


@nb.njit(cache=True, nogil=True)
def block_sums(x, m):
    """Sums over consecutive blocks of length m; the ragged tail is dropped."""
    rows, cols = x.shape
    k = cols // m
    out = np.empty((rows, k))
    for r in range(rows):
        for j in range(k):
            s = 0.0
            cs = 0.0
            for i in range(j * m, (j + 1) * m):
                s, cs = _neumaier_add(s, cs, x[r, i])
            out[r, j] = s + cs
    return out


@nb.njit(cache=True, nogil=True)
def row_tstat(x, shift):
    """sqrt(n) (mean - shift) / sd per row; NaN where the sample sd is zero.

    Also returns the sample sd and the mean so callers can build intervals.
    """
    rows, n = x.shape
    t_out = np.empty(rows)
    mean_out = np.empty(rows)
    sd_out = np.empty(rows)
    for r in range(rows):
        s = 0.0
        cs = 0.0
        constant = True
        for c in range(n):
            s, cs = _neumaier_add(s, cs, x[r, c])
            if x[r, c] != x[r, 0]:
                constant = False
        mean = (s + cs) / n
        q = 0.0
        cq = 0.0
        for c in range(n):
            d = x[r, c] - mean
            q, cq = _neumaier_add(q, cq, d * d)
        sd = np.sqrt((q + cq) / (n - 1))
        mean_out[r] = mean
        sd_out[r] = sd
        # a constant row can leave a rounding residue in sd
        if constant:
            sd = 0.0
            sd_out[r] = 0.0
        if sd > 0.0:
            t_out[r] = np.sqrt(n) * (mean - shift) / sd
        else:
            t_out[r] = np.nan
    return t_out, mean_out, sd_out
