"""Side-by-side timing of the numba and numpy kernel implementations.

Runs each hot kernel on pipeline-representative shapes, checks that both
backends agree, and prints per-kernel timings with the speedup factor.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np
import scipy.signal

from eegpipe import _kernels_numpy

try:
    from eegpipe import _kernels_numba
except ImportError:
    _kernels_numba = None


def _cases(rng):
    sos = scipy.signal.butter(4, [0.5, 20.0], btype="band", output="sos",
                              fs=200.0)
    # one 60 s window's 16 montage differentials
    x_filt = rng.normal(size=(16, 12000))

    # first conv block of the 2-D spectrogram branch
    x_conv = rng.normal(size=(8, 4, 40, 625))
    w_conv = rng.normal(size=(8, 4, 3, 3))

    # EEGNet depthwise stage across electrodes
    x_dw = rng.normal(size=(8, 4, 16, 1000))
    w_dw = rng.normal(size=(4, 2, 16, 1))

    return [
        ("sosfilt", "sosfilt", (sos, x_filt)),
        ("corr2d", "corr2d", (x_conv, w_conv)),
        ("corr2d_dw", "corr2d_dw", (x_dw, w_dw)),
    ]


def _best_time(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5,
                        help="timing repetitions per kernel (best is kept)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = _cases(rng)

    if _kernels_numba is None:
        print("numba backend unavailable; timing numpy only")

    header = f"{'kernel':<12}{'numpy':>12}{'numba':>12}{'speedup':>10}" \
             f"{'max |diff|':>14}"
    print(header)
    print("-" * len(header))
    for name, attr, call_args in cases:
        np_fn = getattr(_kernels_numpy, attr)
        t_np = _best_time(np_fn, call_args, args.repeat)
        if _kernels_numba is None:
            print(f"{name:<12}{t_np * 1e3:>10.2f}ms{'-':>12}{'-':>10}"
                  f"{'-':>14}")
            continue
        nb_fn = getattr(_kernels_numba, attr)
        nb_fn(*call_args)  # JIT warmup outside the timed region
        t_nb = _best_time(nb_fn, call_args, args.repeat)
        diff = float(np.max(np.abs(np_fn(*call_args) - nb_fn(*call_args))))
        print(f"{name:<12}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms"
              f"{t_np / t_nb:>9.1f}x{diff:>14.2e}")


if __name__ == "__main__":
    main()
