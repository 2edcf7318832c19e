"""Stochastic training-time transforms for spectrograms and waveforms.

Five operations: band masking on spectrogram images, mixup of inputs and
label distributions, re-centering of the 50 s crop inside its context
buffer, joint time reversal, and left-right chain swapping.  Every
operation takes an explicit generator so batches are reproducible and
parallelism-invariant.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .signals import CHAIN_NAMES, EegWindow, MontageSignals, crop_center

log = logging.getLogger(__name__)

# Chain-axis permutation that swaps LL<->RL and LP<->RP.
SIDE_SWAP = (3, 2, 1, 0)
_MASK_WIDTH_MAX = 8


@dataclass(frozen=True)
class AugmentConfig:
    """Probabilities and ranges for the augmentation stack."""

    xy_mask_prob: float = 0.5
    xy_mask_max_nodes: int = 8
    mixup_alpha: float = 0.4
    mixup_prob: float = 0.5
    window_shift_max_s: float = 5.0
    flip_time_prob: float = 0.5
    flip_side_prob: float = 0.5

    def __post_init__(self):
        for name in ("xy_mask_prob", "mixup_prob", "flip_time_prob", "flip_side_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.xy_mask_max_nodes < 1:
            raise ValueError("xy_mask_max_nodes must be >= 1")
        if self.window_shift_max_s < 0:
            raise ValueError("window_shift_max_s must be >= 0")
        if self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be positive")


def xy_mask(
    img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator
) -> np.ndarray:
    """Zero out random full-height time bands or full-width frequency bands.

    With probability cfg.xy_mask_prob, draws k ~ Uniform{1..max_nodes}
    masks; each independently picks the time or frequency axis by fair
    coin, a width in Uniform{1..8} bins, and a uniform placement.  The
    unmasked branch returns the input unchanged.
    """
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] < 8 or img.shape[1] < 8:
        raise ValueError(f"image must be at least 8x8, got shape {img.shape}")
    if rng.random() >= cfg.xy_mask_prob:
        return img
    out = img.copy()
    n_masks = int(rng.integers(1, cfg.xy_mask_max_nodes + 1))
    for _ in range(n_masks):
        time_band = rng.random() < 0.5
        width = int(rng.integers(1, _MASK_WIDTH_MAX + 1))
        if time_band:
            start = int(rng.integers(0, img.shape[1] - width + 1))
            out[:, start:start + width] = 0.0
        else:
            start = int(rng.integers(0, img.shape[0] - width + 1))
            out[start:start + width, :] = 0.0
    return out


def mixup(
    a: tuple[np.ndarray, np.ndarray],
    b: tuple[np.ndarray, np.ndarray],
    lam: float | None = None,
    rng: np.random.Generator | None = None,
    alpha: float = 0.4,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of two (input, distribution) pairs.

    lam defaults to a Beta(alpha, alpha) draw.  Endpoints return the
    corresponding pair bit-exactly.
    """
    xa, pa = a
    xb, pb = b
    xa, xb = np.asarray(xa), np.asarray(xb)
    pa, pb = np.asarray(pa, dtype=np.float64), np.asarray(pb, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ValueError(f"input shapes differ: {xa.shape} vs {xb.shape}")
    if pa.shape != pb.shape:
        raise ValueError(f"label shapes differ: {pa.shape} vs {pb.shape}")
    if lam is None:
        if rng is None:
            raise ValueError("either lam or rng must be given")
        lam = float(rng.beta(alpha, alpha))
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    if lam == 1.0:
        return xa.copy(), pa.copy()
    if lam == 0.0:
        return xb.copy(), pb.copy()
    x = lam * xa + (1.0 - lam) * xb
    p = lam * pa + (1.0 - lam) * pb
    return x, p


def shift_window(
    eeg: EegWindow,
    rng: np.random.Generator,
    max_shift_s: float = 5.0,
    span_s: float = 50.0,
) -> EegWindow:
    """Crop span_s seconds re-centered by a uniform shift within the buffer.

    When the buffer cannot absorb the drawn shift, falls back to the
    centered crop and logs the event.
    """
    delta = float(rng.uniform(-max_shift_s, max_shift_s)) if max_shift_s else 0.0
    usable = (eeg.duration_s - span_s) / 2.0
    if abs(delta) > usable + 1e-12:
        log.warning(
            "window %s: shift %.2f s exceeds the %.2f s of spare context; "
            "using the centered crop", eeg.eeg_id, delta, max(usable, 0.0))
        delta = 0.0
    return crop_center(eeg, span_s, shift_s=delta)


def flip_time(
    x: np.ndarray, rng: np.random.Generator, p: float = 0.5
) -> np.ndarray:
    """Reverse the time (last) axis of all channels jointly with prob p."""
    x = np.asarray(x)
    if rng.random() < p:
        return np.ascontiguousarray(x[..., ::-1])
    return x


def flip_brain_side(
    ms: MontageSignals, rng: np.random.Generator, p: float = 0.5
) -> MontageSignals:
    """Swap LL with RL and LP with RP with probability p."""
    if rng.random() < p:
        return MontageSignals(
            chains=np.ascontiguousarray(ms.chains[list(SIDE_SWAP)]),
            rate_hz=ms.rate_hz, eeg_id=ms.eeg_id, t0_s=ms.t0_s,
        )
    return ms


def swap_sides_array(arr: np.ndarray) -> np.ndarray:
    """Left-right chain swap for stacked arrays.

    Accepts either chain-major arrays with a leading axis of 4 (one entry
    per chain, order LL LP RP RL) or flat 16-row differential matrices in
    the same chain order.
    """
    arr = np.asarray(arr)
    if arr.shape[0] == len(CHAIN_NAMES):
        return np.ascontiguousarray(arr[list(SIDE_SWAP)])
    if arr.shape[0] == 16:
        perm = [c * 4 + i for c in SIDE_SWAP for i in range(4)]
        return np.ascontiguousarray(arr[perm])
    raise ValueError(
        f"expected a leading axis of 4 chains or 16 differentials, got "
        f"shape {arr.shape}"
    )
