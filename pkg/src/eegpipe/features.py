"""Model-ready feature banks built from raw windows.

Each record's full buffer is kept in feature space (pooled waveform
and/or chain power images) so training can crop shifted spans without
touching the raw signal again.  Cropping, flips, masking, and mixup all
happen on these banks.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .augment import AugmentConfig, mixup, swap_sides_array, xy_mask
from .cwt import chain_spectrogram, downsample_time, normalize_log, scales_for_band
from .dataset import vote_distribution
from .errors import PipelineError
from .signals import (
    CHAIN_NAMES,
    MontageSpec,
    apply_montage,
    bandpass_filter,
    clip_signal,
)

WAVE_KIND = "wave"
IMAGE_KIND = "image"
BOTH_KIND = "both"

MODEL_FEATURE_KINDS = {
    "eegnet": WAVE_KIND,
    "mlp": IMAGE_KIND,
    "conv2d": IMAGE_KIND,
    "multimodal": BOTH_KIND,
}


@dataclass(frozen=True)
class FeatureConfig:
    """Shared preprocessing and representation parameters."""

    span_s: float = 50.0
    low_hz: float = 0.5
    high_hz: float = 20.0
    filter_order: int = 4
    clip_uv: float = 1024.0
    wave_pool: int = 10
    wave_scale_uv: float = 5.0
    wave_standardize: bool = True
    cwt_f_min: float = 0.5
    cwt_f_max: float = 40.0
    cwt_n_scales: int = 40
    cwt_stride: int = 16
    image_pool: int = 5

    def __post_init__(self):
        if self.span_s <= 0:
            raise ValueError(f"span_s must be positive, got {self.span_s}")
        if self.wave_pool < 1 or self.image_pool < 1:
            raise ValueError("pooling factors must be >= 1")
        if self.wave_scale_uv <= 0:
            raise ValueError("wave_scale_uv must be positive")

    def cache_tag(self) -> str:
        blob = repr(sorted(self.__dict__.items())).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def filtered_montage(window, fc: FeatureConfig, spec: MontageSpec | None = None):
    """Montage differentials of the full window: derive, clip, bandpass."""
    ms = apply_montage(window, spec)
    flat = clip_signal(ms.as_matrix(), fc.clip_uv)
    flat = bandpass_filter(flat, ms.rate_hz, fc.low_hz, fc.high_hz,
                           fc.filter_order)
    return flat, ms.rate_hz


def pooled_wave(flat: np.ndarray, fc: FeatureConfig) -> np.ndarray:
    """(16, T) differentials -> (16, T // wave_pool) scaled float32.

    With wave_standardize the scaled bank is divided by its own standard
    deviation (floored at 1e-6) so every record enters the model at unit
    spread regardless of recording gain.
    """
    pooled = downsample_time(flat, fc.wave_pool) / fc.wave_scale_uv
    if fc.wave_standardize:
        pooled = pooled / max(float(pooled.std()), 1e-6)
    return pooled.astype(np.float32)


def chain_power_image(flat: np.ndarray, rate_hz: float,
                      fc: FeatureConfig) -> np.ndarray:
    """(16, T) differentials -> (4, n_scales, T // stride) raw chain power."""
    bank = scales_for_band(fc.cwt_f_min, fc.cwt_f_max, fc.cwt_n_scales,
                           rate_hz)
    chains = []
    for ci, chain in enumerate(CHAIN_NAMES):
        spec = chain_spectrogram(flat[4 * ci:4 * ci + 4], bank, chain)
        chains.append(downsample_time(spec.power, fc.cwt_stride))
    return np.stack(chains).astype(np.float32)


@dataclass
class TrainingData:
    """Full-buffer feature banks plus targets for one dataset."""

    kind: str
    targets: np.ndarray               # (n, 6) float64 vote distributions
    votes: np.ndarray                 # (n,) int64 total vote counts
    wave: np.ndarray | None = None    # (n, 16, Tp)
    image: np.ndarray | None = None   # (n, 4, S, C) raw power
    wave_span: int = 0
    image_span: int = 0
    image_pool: int = 1
    wave_rate: float = 0.0            # pooled samples per second
    image_rate: float = 0.0           # power columns per second

    def __post_init__(self):
        if self.kind not in (WAVE_KIND, IMAGE_KIND, BOTH_KIND):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        n = self.targets.shape[0]
        for name, bank in (("wave", self.wave), ("image", self.image)):
            if bank is not None and bank.shape[0] != n:
                raise ValueError(
                    f"{name} bank holds {bank.shape[0]} rows for {n} records")

    @property
    def n_records(self) -> int:
        return int(self.targets.shape[0])

    def wave_center(self) -> int:
        return (self.wave.shape[-1] - self.wave_span) // 2

    def image_center(self) -> int:
        return (self.image.shape[-1] - self.image_span) // 2

    def model_input_shapes(self):
        shapes = {}
        if self.wave is not None:
            shapes["wave"] = (self.wave.shape[1], self.wave_span)
        if self.image is not None:
            shapes["image"] = (self.image.shape[1], self.image.shape[2],
                               self.image_span // self.image_pool)
        return shapes


def _image_cache_path(cache_dir, eeg_id: str, tag: str) -> str:
    return os.path.join(str(cache_dir), "train_images",
                        f"{eeg_id}-{tag}.f32")


def build_training_data(
    windows,
    records,
    kind: str,
    fc: FeatureConfig | None = None,
    montage: MontageSpec | None = None,
    cache_dir=None,
) -> TrainingData:
    """Assemble feature banks for every record, in record order.

    Windows are matched to records by eeg_id.  Image banks are the
    expensive part; with cache_dir set they are reused across runs keyed
    by the feature parameters.
    """
    fc = fc or FeatureConfig()
    if kind in MODEL_FEATURE_KINDS:
        kind = MODEL_FEATURE_KINDS[kind]
    by_id = {w.eeg_id: w for w in windows}
    missing = [r.eeg_id for r in records if r.eeg_id not in by_id]
    if missing:
        raise PipelineError(
            f"no window for record eeg_id {missing[0]!r} "
            f"({len(missing)} missing in total)")

    targets = np.stack([vote_distribution(r) for r in records])
    votes = np.array([r.total_votes for r in records], dtype=np.int64)
    want_wave = kind in (WAVE_KIND, BOTH_KIND)
    want_image = kind in (IMAGE_KIND, BOTH_KIND)
    tag = fc.cache_tag()

    waves, images = [], []
    wave_rate = image_rate = 0.0
    for rec in records:
        window = by_id[rec.eeg_id]
        flat = None
        if want_wave or want_image:
            flat, rate = filtered_montage(window, fc, montage)
        if want_wave:
            waves.append(pooled_wave(flat, fc))
            wave_rate = rate / fc.wave_pool
        if want_image:
            img = None
            if cache_dir is not None:
                path = _image_cache_path(cache_dir, rec.eeg_id, tag)
                if os.path.exists(path):
                    img = np.fromfile(path, dtype="<f4")
                    cols = img.size // (4 * fc.cwt_n_scales)
                    img = img.reshape(4, fc.cwt_n_scales, cols)
            if img is None:
                img = chain_power_image(flat, rate, fc)
                if cache_dir is not None:
                    path = _image_cache_path(cache_dir, rec.eeg_id, tag)
                    os.makedirs(os.path.dirname(path), exist_ok=True)
                    tmp = path + ".tmp"
                    img.astype("<f4").tofile(tmp)
                    os.replace(tmp, path)
            images.append(img)
            image_rate = rate / fc.cwt_stride

    wave_bank = np.stack(waves) if want_wave else None
    image_bank = np.stack(images) if want_image else None
    wave_span = image_span = 0
    if want_wave:
        wave_span = int(round(fc.span_s * wave_rate))
        if wave_span > wave_bank.shape[-1]:
            raise PipelineError(
                f"span {fc.span_s}s needs {wave_span} pooled samples, "
                f"bank holds {wave_bank.shape[-1]}")
    if want_image:
        image_span = int(round(fc.span_s * image_rate))
        image_span -= image_span % fc.image_pool
        if image_span > image_bank.shape[-1] or image_span < fc.image_pool:
            raise PipelineError(
                f"span {fc.span_s}s needs {image_span} power columns, "
                f"bank holds {image_bank.shape[-1]}")
    return TrainingData(
        kind=kind, targets=targets, votes=votes,
        wave=wave_bank, image=image_bank,
        wave_span=wave_span, image_span=image_span,
        image_pool=fc.image_pool,
        wave_rate=wave_rate, image_rate=image_rate,
    )


def _finalize_images(crops: np.ndarray, pool: int) -> np.ndarray:
    """Pool raw power columns then log-standardize each chain image."""
    pooled = downsample_time(crops, pool)
    out = np.empty(pooled.shape, dtype=np.float32)
    for b in range(pooled.shape[0]):
        for c in range(pooled.shape[1]):
            out[b, c] = normalize_log(pooled[b, c])
    return out


def centered_batch(td: TrainingData, idx):
    """Deterministic evaluation inputs: centered crops, no augmentation."""
    idx = np.asarray(idx)
    parts = {}
    if td.wave is not None:
        s = td.wave_center()
        parts["wave"] = np.ascontiguousarray(
            td.wave[idx, :, s:s + td.wave_span])
    if td.image is not None:
        s = td.image_center()
        crops = td.image[idx, :, :, s:s + td.image_span]
        parts["image"] = _finalize_images(crops, td.image_pool)
    return _pack(td.kind, parts)


def _pack(kind, parts):
    if kind == WAVE_KIND:
        return parts["wave"]
    if kind == IMAGE_KIND:
        return parts["image"]
    return parts["wave"], parts["image"]


def _shift_offsets(rng, n, max_s, feat_rate, center, full, span):
    """Per-row crop offsets in feature samples, clipped to the buffer."""
    usable = min(center, full - span - center)
    limit = min(int(round(max_s * feat_rate)), usable)
    if limit <= 0:
        return np.zeros(n, dtype=np.int64)
    return np.round(rng.uniform(-limit, limit, size=n)).astype(np.int64)


def augmented_batch(
    td: TrainingData,
    idx,
    weights: np.ndarray,
    cfg: AugmentConfig,
    rng: np.random.Generator,
):
    """Training inputs for the given rows: shift, flips, masks, mixup.

    One shift draw and one coin per flip apply jointly to both branches
    so waveform and image stay views of the same (augmented) record;
    masking is drawn per branch.  Mixup fires per row with probability
    cfg.mixup_prob, pairing the row with a partner from a batch
    permutation and reusing one lambda per pair across inputs, targets,
    and weights.
    """
    idx = np.asarray(idx)
    n = idx.size
    shifts_s = rng.uniform(-cfg.window_shift_max_s, cfg.window_shift_max_s,
                           size=n)
    flip_t = rng.random(n) < cfg.flip_time_prob
    flip_s = rng.random(n) < cfg.flip_side_prob

    parts = {}
    if td.wave is not None:
        center, full = td.wave_center(), td.wave.shape[-1]
        usable = min(center, full - td.wave_span - center)
        out = np.empty((n, td.wave.shape[1], td.wave_span), dtype=np.float32)
        for i, row in enumerate(idx):
            off = int(round(shifts_s[i] * td.wave_rate))
            off = max(-usable, min(usable, off))
            s = center + off
            crop = td.wave[row, :, s:s + td.wave_span]
            if flip_t[i]:
                crop = crop[:, ::-1]
            if flip_s[i]:
                crop = swap_sides_array(crop)
            crop = xy_mask(np.ascontiguousarray(crop), cfg, rng)
            out[i] = crop
        parts["wave"] = out
    if td.image is not None:
        center, full = td.image_center(), td.image.shape[-1]
        usable = min(center, full - td.image_span - center)
        crops = np.empty((n, td.image.shape[1], td.image.shape[2],
                          td.image_span), dtype=np.float32)
        for i, row in enumerate(idx):
            off = int(round(shifts_s[i] * td.image_rate))
            off = max(-usable, min(usable, off))
            s = center + off
            crops[i] = td.image[row, :, :, s:s + td.image_span]
        imgs = _finalize_images(crops, td.image_pool)
        for i in range(n):
            if flip_t[i]:
                imgs[i] = imgs[i, :, :, ::-1]
            if flip_s[i]:
                imgs[i] = swap_sides_array(imgs[i])
            for c in range(imgs.shape[1]):
                imgs[i, c] = xy_mask(np.ascontiguousarray(imgs[i, c]),
                                     cfg, rng)
        parts["image"] = imgs

    targets = td.targets[idx].copy()
    w = np.asarray(weights, dtype=np.float64).copy()
    partner = rng.permutation(n)
    gates = rng.random(n) < cfg.mixup_prob
    lams = rng.beta(cfg.mixup_alpha, cfg.mixup_alpha, size=n)
    mixed_parts = {k: v.copy() for k, v in parts.items()}
    mixed_targets = targets.copy()
    for i in range(n):
        if not gates[i]:
            continue
        j = int(partner[i])
        lam = float(lams[i])
        for k in parts:
            mixed_parts[k][i], mixed_t = mixup(
                (parts[k][i], targets[i]), (parts[k][j], targets[j]),
                lam=lam)
        mixed_targets[i] = mixed_t
        w[i] = lam * weights[i] + (1.0 - lam) * weights[j]
    return _pack(td.kind, mixed_parts), mixed_targets, w
