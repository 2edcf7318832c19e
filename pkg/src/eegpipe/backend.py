"""Kernel backend selection.

The numerically hot inner loops (biquad cascades, 2-D correlations) exist in
two interchangeable implementations:

* ``eegpipe._kernels_numba`` -- ``@njit``-compiled loops, used by default.
* ``eegpipe._kernels_numpy`` -- pure-NumPy equivalents (stride tricks / BLAS).

Selection happens once at import time via the ``EEGPIPE_BACKEND`` environment
variable: ``auto`` (default; numba if importable), ``numba``, or ``numpy``.
Both backends produce results equal to within floating-point summation-order
differences; each is individually deterministic.

``benchmarks/bench_kernels.py`` times the two side by side.
"""

from __future__ import annotations

import os

_CHOICE = os.environ.get("EEGPIPE_BACKEND", "auto").strip().lower()

if _CHOICE not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"EEGPIPE_BACKEND must be 'auto', 'numba' or 'numpy', got {_CHOICE!r}"
    )

if _CHOICE == "numpy":
    from eegpipe import _kernels_numpy as kernels

    _NAME = "numpy"
else:
    try:
        from eegpipe import _kernels_numba as kernels

        _NAME = "numba"
    except ImportError:
        if _CHOICE == "numba":
            raise
        from eegpipe import _kernels_numpy as kernels

        _NAME = "numpy"


def backend_name() -> str:
    """Resolved backend: 'numba' or 'numpy'."""
    return _NAME


sosfilt = kernels.sosfilt
corr2d = kernels.corr2d
corr2d_dw = kernels.corr2d_dw
