"""Numba ``@njit`` implementations of the hot kernels.

Default backend.  Explicit loops, no temporaries beyond the output buffer;
first call per dtype pays a compile cost (cached on disk afterwards).
fastmath stays off so results track IEEE evaluation order.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def sosfilt(sos, x):
    """Cascaded-biquad filter (direct form II transposed) along the last axis.

    ``sos`` (n_sections, 6) rows [b0 b1 b2 1 a1 a2]; ``x`` (n_signals, T).
    """
    y = x.astype(np.float64)
    n_sig, n_t = y.shape
    for i in range(n_sig):
        for s in range(sos.shape[0]):
            b0 = sos[s, 0]
            b1 = sos[s, 1]
            b2 = sos[s, 2]
            a1 = sos[s, 4]
            a2 = sos[s, 5]
            z1 = 0.0
            z2 = 0.0
            for t in range(n_t):
                xn = y[i, t]
                yn = b0 * xn + z1
                z1 = b1 * xn - a1 * yn + z2
                z2 = b2 * xn - a2 * yn
                y[i, t] = yn
    return y


@njit(cache=True)
def corr2d(x, w):
    """Valid cross-correlation: (B,C,H,W) x (F,C,KH,KW) -> (B,F,OH,OW)."""
    n_b, n_c, h, wd = x.shape
    n_f, _, kh, kw = w.shape
    oh = h - kh + 1
    ow = wd - kw + 1
    out = np.zeros((n_b, n_f, oh, ow), dtype=x.dtype)
    for b in range(n_b):
        for f in range(n_f):
            for c in range(n_c):
                for i in range(oh):
                    for dh in range(kh):
                        for dw in range(kw):
                            wv = w[f, c, dh, dw]
                            for j in range(ow):
                                out[b, f, i, j] += wv * x[b, c, i + dh, j + dw]
    return out


@njit(cache=True)
def corr2d_dw(x, w):
    """Depthwise valid cross-correlation.

    ``x`` (B,C,H,W), ``w`` (C,M,KH,KW) -> (B,C*M,OH,OW); output plane c*M+m
    correlates input channel c with kernel (c,m).
    """
    n_b, n_c, h, wd = x.shape
    n_m, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    oh = h - kh + 1
    ow = wd - kw + 1
    out = np.zeros((n_b, n_c * n_m, oh, ow), dtype=x.dtype)
    for b in range(n_b):
        for c in range(n_c):
            for m in range(n_m):
                fo = c * n_m + m
                for i in range(oh):
                    for dh in range(kh):
                        for dw in range(kw):
                            wv = w[c, m, dh, dw]
                            for j in range(ow):
                                out[b, fo, i, j] += wv * x[b, c, i + dh, j + dw]
    return out
