"""Morlet wavelet spectrograms over bipolar chains.

Each chain image is the elementwise mean of four per-differential power
maps, pooled along time and log-standardized.  Two resolutions are built
from the same 40-scale bank: a high-resolution image from the 50 s window
(stride 16, 625 bins) and a low-resolution image from the surrounding
600 s context (2 s bins, 300 of them).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import LoadError
from .signals import (
    CHAIN_NAMES,
    EegWindow,
    MontageSignals,
    MontageSpec,
    apply_montage,
    bandpass_filter,
    clip_signal,
)

RAW_POWER = "raw_power"
LOG_STANDARDIZED = "log_standardized"


@dataclass(frozen=True)
class ScaleBank:
    """Log-spaced analysis frequencies and their Morlet scales.

    freqs_hz ascends; scales descend accordingly (scale = omega0 * rate /
    (2*pi*f), the Morlet center-frequency relation).
    """

    freqs_hz: np.ndarray
    scales: np.ndarray
    omega0: float
    rate_hz: float

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=np.float64)
        s = np.asarray(self.scales, dtype=np.float64)
        if f.ndim != 1 or f.shape != s.shape or f.size < 2:
            raise ValueError("freqs_hz and scales must be matching 1-D arrays")
        if not np.all(np.diff(f) > 0):
            raise ValueError("center frequencies must strictly increase")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "scales", s)

    @property
    def n_scales(self) -> int:
        return self.freqs_hz.size

    def max_support(self) -> int:
        """Sample length of the longest (coarsest-scale) kernel."""
        return 2 * _half_width(float(self.scales.max())) + 1


def scales_for_band(
    f_min: float,
    f_max: float,
    n_scales: int,
    rate_hz: float,
    omega0: float = 6.0,
) -> ScaleBank:
    """Log-spaced frequencies from f_min to f_max inclusive, with scales."""
    if not (0.0 < f_min < f_max):
        raise ValueError(f"need 0 < f_min < f_max, got {f_min}, {f_max}")
    if f_max >= rate_hz / 2:
        raise ValueError(
            f"f_max {f_max} must sit below the Nyquist rate {rate_hz / 2}"
        )
    if n_scales < 2:
        raise ValueError(f"n_scales must be >= 2, got {n_scales}")
    freqs = np.geomspace(f_min, f_max, n_scales)
    scales = omega0 * rate_hz / (2.0 * np.pi * freqs)
    return ScaleBank(freqs_hz=freqs, scales=scales, omega0=omega0,
                     rate_hz=rate_hz)


def _half_width(scale: float) -> int:
    # Gaussian envelope is exp(-t^2 / (2 s^2)); four scale units out the
    # amplitude is down to e^-8, small enough to truncate.
    return int(np.ceil(4.0 * scale))


def morlet_kernel(scale: float, omega0: float) -> np.ndarray:
    """Discrete L2-normalized analytic Morlet wavelet at one scale."""
    h = _half_width(scale)
    t = np.arange(-h, h + 1, dtype=np.float64)
    psi = np.exp(-0.5 * (t / scale) ** 2) * np.exp(1j * omega0 * t / scale)
    return psi / np.sqrt(np.sum(np.abs(psi) ** 2))


def cwt_power(x: np.ndarray, bank: ScaleBank) -> np.ndarray:
    """Squared wavelet coefficient magnitudes, shape (..., n_scales, n).

    Correlation against each unit-norm kernel under zero padding, aligned
    so output column t is the coefficient centered at sample t.  Because
    the Morlet kernel is Hermitian (psi(-t) = conj(psi(t))), correlation
    equals convolution with the kernel itself, evaluated here through one
    shared FFT of the signal.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    support = bank.max_support()
    if n < support:
        raise ValueError(
            f"signal of {n} samples is shorter than the {support}-sample "
            f"wavelet support at the coarsest scale"
        )
    fft_len = int(scipy.fft.next_fast_len(n + support - 1))
    spectrum = np.fft.fft(x, fft_len, axis=-1)
    out = np.empty(x.shape[:-1] + (bank.n_scales, n), dtype=np.float64)
    for k in range(bank.n_scales):
        kern = morlet_kernel(float(bank.scales[k]), bank.omega0)
        h = (kern.size - 1) // 2
        kf = np.fft.fft(kern, fft_len)
        coef = np.fft.ifft(spectrum * kf, axis=-1)[..., h:h + n]
        out[..., k, :] = coef.real ** 2 + coef.imag ** 2
    return out


@dataclass(frozen=True)
class Spectrogram:
    """One chain's time-frequency image with its axes."""

    power: np.ndarray
    freqs_hz: np.ndarray
    times_s: np.ndarray
    chain_id: str
    normalization: str = RAW_POWER

    def __post_init__(self):
        p = np.asarray(self.power)
        f = np.asarray(self.freqs_hz, dtype=np.float64)
        t = np.asarray(self.times_s, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"power must be 2-D, got shape {p.shape}")
        if p.shape != (f.size, t.size):
            raise ValueError(
                f"axes ({f.size}, {t.size}) do not match power shape {p.shape}"
            )
        if self.normalization not in (RAW_POWER, LOG_STANDARDIZED):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.normalization == RAW_POWER and p.size and p.min() < 0:
            raise ValueError("raw power must be nonnegative")
        object.__setattr__(self, "power", p)
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "times_s", t)


def chain_spectrogram(
    diffs: np.ndarray, bank: ScaleBank, chain_id: str = "",
    t0_s: float = 0.0,
) -> Spectrogram:
    """Mean of the four per-differential power maps of one chain.

    The four values at each cell are accumulated in sorted order, so the
    result is bit-identical under any permutation of the differentials.
    """
    d = np.asarray(diffs, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != 4:
        raise ValueError(
            f"expected 4 equal-length differentials, got shape "
            f"{getattr(diffs, 'shape', None)}"
        )
    power = cwt_power(d, bank)
    ordered = np.sort(power, axis=0)
    mean = (
        ((ordered[0] + ordered[1]) + ordered[2]) + ordered[3]
    ) * 0.25
    times = t0_s + np.arange(d.shape[1]) / bank.rate_hz
    return Spectrogram(
        power=mean.astype(np.float32),
        freqs_hz=bank.freqs_hz,
        times_s=times,
        chain_id=chain_id,
        normalization=RAW_POWER,
    )


def downsample_time(m: np.ndarray, stride: int) -> np.ndarray:
    """Non-overlapping mean pooling along time; partial tail dropped."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    m = np.asarray(m)
    if stride == 1:
        return m
    n_bins = m.shape[-1] // stride
    trimmed = m[..., :n_bins * stride]
    shape = trimmed.shape[:-1] + (n_bins, stride)
    return trimmed.reshape(shape).mean(axis=-1)


def normalize_log(m: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """log(m + eps), then per-image standardization with a 1e-8 std floor."""
    m = np.asarray(m)
    y = np.log(m.astype(np.float64) + eps)
    y -= y.mean()
    y /= max(float(y.std()), 1e-8)
    out_dtype = m.dtype if m.dtype in (np.float32, np.float64) else np.float64
    return y.astype(out_dtype)


@dataclass(frozen=True)
class SpectrogramSet:
    """One Spectrogram per chain, identical axes, one resolution tag."""

    specs: tuple[Spectrogram, ...]
    resolution: str

    def __post_init__(self):
        if tuple(s.chain_id for s in self.specs) != CHAIN_NAMES:
            raise ValueError(f"specs must cover chains {CHAIN_NAMES} in order")
        first = self.specs[0]
        for s in self.specs[1:]:
            if not (np.array_equal(s.freqs_hz, first.freqs_hz)
                    and np.array_equal(s.times_s, first.times_s)):
                raise ValueError("all chain spectrograms must share axes")

    def chain(self, name: str) -> Spectrogram:
        return self.specs[CHAIN_NAMES.index(name)]

    def as_array(self) -> np.ndarray:
        """Stacked images, shape (4, n_scales, n_timebins), float32."""
        return np.stack([s.power for s in self.specs]).astype(np.float32)

    @property
    def freqs_hz(self) -> np.ndarray:
        return self.specs[0].freqs_hz

    @property
    def times_s(self) -> np.ndarray:
        return self.specs[0].times_s


def _build_set(
    ms: MontageSignals,
    bank: ScaleBank,
    stride: int,
    resolution: str,
    normalize: bool,
) -> SpectrogramSet:
    specs = []
    rate = ms.rate_hz
    n_bins = ms.n_samples // stride
    times = ms.t0_s + (np.arange(n_bins) + 0.5) * stride / rate
    for ci, name in enumerate(CHAIN_NAMES):
        spec = chain_spectrogram(ms.chains[ci], bank, chain_id=name,
                                 t0_s=ms.t0_s)
        img = downsample_time(spec.power.astype(np.float64), stride)
        if normalize:
            img = normalize_log(img)
            tag = LOG_STANDARDIZED
        else:
            tag = RAW_POWER
        specs.append(Spectrogram(
            power=img.astype(np.float32),
            freqs_hz=bank.freqs_hz,
            times_s=times,
            chain_id=name,
            normalization=tag,
        ))
    return SpectrogramSet(specs=tuple(specs), resolution=resolution)


def build_spec_hr(
    ms: MontageSignals,
    bank: ScaleBank | None = None,
    stride: int = 16,
    normalize: bool = True,
) -> SpectrogramSet:
    """High-resolution set from filtered/clipped montage signals.

    For the standard 50 s window at 200 Hz this yields 4 images of
    40 x 625.
    """
    if bank is None:
        bank = scales_for_band(0.5, 40.0, 40, ms.rate_hz)
    return _build_set(ms, bank, stride, "spec_hr", normalize)


def build_spec_lr(
    w: EegWindow,
    bank: ScaleBank | None = None,
    n_timebins: int = 300,
    normalize: bool = True,
    montage: MontageSpec | None = None,
    clip_uv: float = 1024.0,
    low_hz: float = 0.5,
    high_hz: float = 20.0,
) -> SpectrogramSet:
    """Low-resolution set from the full 600 s context window.

    Applies montage, clipping, and the zero-phase bandpass itself, then
    the same chain pipeline as the high-resolution set with 2 s time bins
    (stride rate*2, giving 40 x 300 at 200 Hz).
    """
    expected = 600.0
    if abs(w.duration_s - expected) > 1.0 / w.rate_hz:
        raise ValueError(
            f"low-resolution build expects a {expected:.0f} s window, got "
            f"{w.duration_s:.3f} s"
        )
    ms = apply_montage(w, montage)
    chains = bandpass_filter(
        clip_signal(ms.chains, clip_uv), w.rate_hz, low_hz, high_hz
    )
    ms = MontageSignals(chains=chains, rate_hz=ms.rate_hz, eeg_id=ms.eeg_id,
                        t0_s=ms.t0_s)
    if bank is None:
        bank = scales_for_band(0.5, 40.0, 40, w.rate_hz)
    stride = ms.n_samples // n_timebins
    return _build_set(ms, bank, stride, "spec_lr", normalize)


def save_spectrogram_set(ss: SpectrogramSet, out_dir, stem: str) -> tuple[str, str]:
    """Write images as one flat little-endian float32 block plus axis JSON."""
    os.makedirs(str(out_dir), exist_ok=True)
    data_path = os.path.join(str(out_dir), f"{stem}.f32")
    meta_path = os.path.join(str(out_dir), f"{stem}.json")
    arr = ss.as_array()
    arr.astype("<f4").tofile(data_path)
    meta = {
        "resolution": ss.resolution,
        "chains": list(CHAIN_NAMES),
        "shape": list(arr.shape),
        "freqs_hz": [float(v) for v in ss.freqs_hz],
        "times_s": [float(v) for v in ss.times_s],
        "normalization": ss.specs[0].normalization,
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return data_path, meta_path


def load_spectrogram_set(data_path) -> SpectrogramSet:
    """Inverse of save_spectrogram_set."""
    meta_path = os.path.splitext(str(data_path))[0] + ".json"
    if not os.path.exists(meta_path):
        raise LoadError(f"{data_path}: missing sidecar {meta_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    shape = tuple(int(v) for v in meta["shape"])
    arr = np.fromfile(str(data_path), dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise LoadError(
            f"{data_path}: payload of {arr.size} values does not match "
            f"declared shape {shape}"
        )
    arr = arr.reshape(shape)
    freqs = np.asarray(meta["freqs_hz"], dtype=np.float64)
    times = np.asarray(meta["times_s"], dtype=np.float64)
    specs = tuple(
        Spectrogram(power=arr[i], freqs_hz=freqs, times_s=times,
                    chain_id=name, normalization=meta["normalization"])
        for i, name in enumerate(CHAIN_NAMES)
    )
    return SpectrogramSet(specs=specs, resolution=meta["resolution"])


def render_png(ss: SpectrogramSet, path) -> None:
    """8-bit grayscale render, chains stacked top to bottom.

    Within each chain image, the lowest frequency sits at the bottom row.
    """
    from PIL import Image

    panels = []
    for s in ss.specs:
        img = np.asarray(s.power, dtype=np.float64)
        lo, hi = img.min(), img.max()
        scaled = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
        panels.append(np.flipud((scaled * 255.0).round().astype(np.uint8)))
        panels.append(np.full((2, img.shape[1]), 255, dtype=np.uint8))
    stacked = np.concatenate(panels[:-1], axis=0)
    Image.fromarray(stacked, mode="L").save(str(path))
