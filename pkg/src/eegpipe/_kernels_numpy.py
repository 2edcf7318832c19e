"""Pure-NumPy/SciPy implementations of the hot kernels.

Fallback path for machines without a working numba install (or with
``EEGPIPE_BACKEND=numpy``).  The 2-D correlations go through
``sliding_window_view`` + BLAS, which trades peak memory (a KH*KW-fold
materialized window tensor) for speed.  The biquad recurrence is inherently
sequential, so it is delegated to ``scipy.signal.sosfilt``.
"""

from __future__ import annotations

import numpy as np
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view


def sosfilt(sos: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Cascaded-biquad filter along the last axis.

    ``sos`` has shape (n_sections, 6) with rows [b0 b1 b2 1 a1 a2];
    ``x`` has shape (n_signals, n_samples).  Runs in float64.
    """
    return scipy.signal.sosfilt(
        np.asarray(sos, dtype=np.float64), np.asarray(x, dtype=np.float64), axis=-1
    )


def corr2d(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid cross-correlation: (B,C,H,W) x (F,C,KH,KW) -> (B,F,OH,OW)."""
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # (B,C,OH,OW,KH,KW)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (B,OH,OW,F)
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def corr2d_dw(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Depthwise valid cross-correlation.

    ``x`` (B,C,H,W), ``w`` (C,M,KH,KW) -> (B,C*M,OH,OW) where output plane
    c*M+m correlates input channel c with kernel (c,m).
    """
    b, c, _, _ = x.shape
    m, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # (B,C,OH,OW,KH,KW)
    oh, ow = win.shape[2], win.shape[3]
    out = np.empty((b, c * m, oh, ow), dtype=x.dtype)
    for ci in range(c):
        # (B,OH,OW,KH,KW) x (M,KH,KW) -> (B,OH,OW,M)
        block = np.tensordot(win[:, ci], w[ci], axes=([3, 4], [1, 2]))
        out[:, ci * m : (ci + 1) * m] = block.transpose(0, 3, 1, 2)
    return out
