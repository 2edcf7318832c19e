"""Scalp EEG windows, bipolar montage derivation, and time-domain cleanup.

A raw window holds one multichannel recording segment in microvolts,
channel-major.  The montage step re-references it into four longitudinal
chains of four bipolar differentials each (16 derived channels), which is
what every downstream representation consumes.  Cleanup is a zero-phase
Butterworth bandpass plus amplitude clipping.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.signal

from . import backend
from .errors import LoadError

# 10-20 electrode names recognised by the default montage, plus EKG which
# rides along in source files but never enters a chain.
STANDARD_ELECTRODES = (
    "Fp1", "F3", "C3", "P3", "F7", "T3", "T5", "O1",
    "Fz", "Cz", "Pz",
    "Fp2", "F4", "C4", "P4", "F8", "T4", "T6", "O2",
)

# Left-right electrode mirror across the sagittal midline.  Midline
# electrodes map to themselves.
_MIRROR_BASE = {
    "Fp1": "Fp2", "F3": "F4", "C3": "C4", "P3": "P4",
    "F7": "F8", "T3": "T4", "T5": "T6", "O1": "O2",
    "Fz": "Fz", "Cz": "Cz", "Pz": "Pz",
}
ELECTRODE_MIRROR = dict(_MIRROR_BASE)
ELECTRODE_MIRROR.update({v: k for k, v in _MIRROR_BASE.items() if k != v})

CHAIN_NAMES = ("LL", "LP", "RP", "RL")
PAIRS_PER_CHAIN = 4


@dataclass(frozen=True)
class EegWindow:
    """One fixed-rate EEG segment, channel-major, in microvolts.

    samples has shape (n_channels, n_samples) and must be finite.
    """

    samples: np.ndarray
    rate_hz: float
    electrodes: tuple[str, ...]
    eeg_id: str = ""
    t0_s: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise ValueError(f"samples must be 2-D, got shape {s.shape}")
        if s.shape[1] == 0:
            raise ValueError("window has zero samples")
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if len(self.electrodes) != s.shape[0]:
            raise ValueError(
                f"{len(self.electrodes)} electrode names for "
                f"{s.shape[0]} channels"
            )
        if len(set(self.electrodes)) != len(self.electrodes):
            raise ValueError("duplicate electrode names")
        if not np.all(np.isfinite(s)):
            ch, t = np.argwhere(~np.isfinite(s))[0]
            raise ValueError(
                f"non-finite sample at channel {ch} "
                f"({self.electrodes[ch]!r}), sample {t}"
            )
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "electrodes", tuple(self.electrodes))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.rate_hz

    def channel(self, name: str) -> np.ndarray:
        """Return the trace for one electrode by name."""
        try:
            idx = self.electrodes.index(name)
        except ValueError:
            raise KeyError(f"electrode {name!r} not in window") from None
        return self.samples[idx]


@dataclass(frozen=True)
class MontageSpec:
    """Named bipolar chains, each an ordered list of (anode, cathode) pairs.

    Chains must telescope: the cathode of pair k is the anode of pair k+1.
    The two left chains must be electrode-wise mirrors of the two right
    chains so that a left-right flip of the head maps chain signals onto
    each other exactly.
    """

    chains: tuple[tuple[str, tuple[tuple[str, str], ...]], ...]
    mirror: dict[str, str] = field(default_factory=lambda: dict(ELECTRODE_MIRROR))

    def __post_init__(self):
        names = tuple(name for name, _ in self.chains)
        if names != CHAIN_NAMES:
            raise ValueError(f"chains must be named {CHAIN_NAMES}, got {names}")
        for name, pairs in self.chains:
            if len(pairs) != PAIRS_PER_CHAIN:
                raise ValueError(
                    f"chain {name} has {len(pairs)} pairs, expected "
                    f"{PAIRS_PER_CHAIN}"
                )
            for k in range(len(pairs) - 1):
                if pairs[k][1] != pairs[k + 1][0]:
                    raise ValueError(
                        f"chain {name} does not telescope at pair {k}: "
                        f"{pairs[k][1]} != {pairs[k + 1][0]}"
                    )
        by_name = dict(self.chains)
        for left, right in (("LL", "RL"), ("LP", "RP")):
            for lp, rp in zip(by_name[left], by_name[right]):
                want = tuple(self._mirrored(e) for e in lp)
                if want != rp:
                    raise ValueError(
                        f"chain {right} is not the mirror of {left}: "
                        f"expected pair {want}, got {rp}"
                    )

    def _mirrored(self, electrode: str) -> str:
        try:
            return self.mirror[electrode]
        except KeyError:
            raise ValueError(f"no mirror defined for electrode {electrode!r}") from None

    @property
    def chain_map(self) -> dict[str, tuple[tuple[str, str], ...]]:
        return dict(self.chains)

    def electrodes_used(self) -> tuple[str, ...]:
        seen: list[str] = []
        for _, pairs in self.chains:
            for a, b in pairs:
                for e in (a, b):
                    if e not in seen:
                        seen.append(e)
        return tuple(seen)

    @staticmethod
    def double_banana() -> "MontageSpec":
        """The default longitudinal bipolar layout (16 differentials)."""
        return MontageSpec(chains=(
            ("LL", (("Fp1", "F7"), ("F7", "T3"), ("T3", "T5"), ("T5", "O1"))),
            ("LP", (("Fp1", "F3"), ("F3", "C3"), ("C3", "P3"), ("P3", "O1"))),
            ("RP", (("Fp2", "F4"), ("F4", "C4"), ("C4", "P4"), ("P4", "O2"))),
            ("RL", (("Fp2", "F8"), ("F8", "T4"), ("T4", "T6"), ("T6", "O2"))),
        ))

    @staticmethod
    def from_json(path) -> "MontageSpec":
        """Load a chain layout from a JSON file.

        Expected shape: {"chains": {"LL": [["Fp1","F7"], ...], ...}} with an
        optional "mirror" object overriding the electrode mirror map.
        """
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict) or "chains" not in doc:
            raise LoadError(f"{path}: montage JSON must contain a 'chains' object")
        raw = doc["chains"]
        missing = [n for n in CHAIN_NAMES if n not in raw]
        if missing:
            raise LoadError(f"{path}: montage JSON missing chains {missing}")
        chains = tuple(
            (name, tuple((str(a), str(b)) for a, b in raw[name]))
            for name in CHAIN_NAMES
        )
        mirror = dict(ELECTRODE_MIRROR)
        mirror.update({str(k): str(v) for k, v in doc.get("mirror", {}).items()})
        try:
            return MontageSpec(chains=chains, mirror=mirror)
        except ValueError as exc:
            raise LoadError(f"{path}: {exc}") from None


@dataclass(frozen=True)
class MontageSignals:
    """Bipolar chain signals, shape (n_chains, pairs_per_chain, n_samples).

    Chain axis follows CHAIN_NAMES order.
    """

    chains: np.ndarray
    rate_hz: float
    eeg_id: str = ""
    t0_s: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.chains)
        if c.ndim != 3 or c.shape[:2] != (len(CHAIN_NAMES), PAIRS_PER_CHAIN):
            raise ValueError(
                f"chains must have shape ({len(CHAIN_NAMES)}, "
                f"{PAIRS_PER_CHAIN}, T), got {c.shape}"
            )
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        object.__setattr__(self, "chains", c)

    @property
    def n_samples(self) -> int:
        return self.chains.shape[2]

    def chain(self, name: str) -> np.ndarray:
        return self.chains[CHAIN_NAMES.index(name)]

    def as_matrix(self) -> np.ndarray:
        """All 16 differentials stacked, shape (16, n_samples)."""
        return self.chains.reshape(-1, self.chains.shape[2])


def apply_montage(window: EegWindow, spec: MontageSpec | None = None) -> MontageSignals:
    """Derive bipolar chain signals as anode minus cathode differences.

    Subtraction happens on the stored samples directly, so any reference
    signal common to all electrodes cancels exactly.
    """
    if spec is None:
        spec = MontageSpec.double_banana()
    missing = [e for e in spec.electrodes_used() if e not in window.electrodes]
    if missing:
        raise ValueError(f"window lacks electrodes required by montage: {missing}")
    idx = {name: i for i, name in enumerate(window.electrodes)}
    out = np.empty(
        (len(CHAIN_NAMES), PAIRS_PER_CHAIN, window.n_samples),
        dtype=window.samples.dtype,
    )
    for ci, (_, pairs) in enumerate(spec.chains):
        for pi, (anode, cathode) in enumerate(pairs):
            np.subtract(
                window.samples[idx[anode]], window.samples[idx[cathode]],
                out=out[ci, pi],
            )
    return MontageSignals(
        chains=out, rate_hz=window.rate_hz, eeg_id=window.eeg_id, t0_s=window.t0_s,
    )


def design_bandpass(
    low_hz: float, high_hz: float, rate_hz: float, order: int = 4
) -> np.ndarray:
    """Butterworth bandpass as second-order sections, shape (order, 6).

    `order` is the analog prototype order; the realised bandpass has
    2*order poles arranged as `order` biquads.  Must be even so the
    cascade splits into exact second-order sections.
    """
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")
    if order % 2 != 0:
        raise ValueError(f"order must be even, got {order}")
    if not (0.0 < low_hz < high_hz):
        raise ValueError(f"need 0 < low_hz < high_hz, got {low_hz}, {high_hz}")
    if high_hz >= rate_hz / 2:
        raise ValueError(
            f"high_hz {high_hz} must sit below the Nyquist rate {rate_hz / 2}"
        )
    sos = scipy.signal.butter(
        order, [low_hz, high_hz], btype="band", fs=rate_hz, output="sos"
    )
    return np.ascontiguousarray(sos, dtype=np.float64)


def sos_gain(sos: np.ndarray, freq_hz, rate_hz: float) -> np.ndarray:
    """Magnitude of the cascade's frequency response at the given frequencies.

    Evaluated directly from the section coefficients on the unit circle;
    a forward-backward application squares this magnitude.
    """
    w = 2.0 * np.pi * np.atleast_1d(np.asarray(freq_hz, dtype=np.float64)) / rate_hz
    z = np.exp(-1j * w)
    h = np.ones_like(z)
    for b0, b1, b2, _, a1, a2 in sos:
        h = h * (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
    return np.abs(h)


def bandpass_filter(
    x: np.ndarray,
    rate_hz: float,
    low_hz: float = 0.5,
    high_hz: float = 20.0,
    order: int = 4,
    pad_s: float = 2.0,
) -> np.ndarray:
    """Zero-phase Butterworth bandpass along the last axis.

    The signal is reflect-padded by pad_s seconds at each end, run through
    the biquad cascade forward then backward (squaring the magnitude
    response and cancelling phase), and trimmed back.  Computation is in
    64-bit; the result keeps the input's floating dtype.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 2:
        raise ValueError("need at least 2 samples to filter")
    sos = design_bandpass(low_hz, high_hz, rate_hz, order=order)
    pad = min(int(round(pad_s * rate_hz)), n - 1)
    flat = np.ascontiguousarray(
        x.reshape(-1, n).astype(np.float64, copy=False)
    )
    if pad > 0:
        left = flat[:, pad:0:-1]
        right = flat[:, n - 2:n - 2 - pad:-1]
        padded = np.concatenate([left, flat, right], axis=1)
    else:
        padded = flat
    y = backend.sosfilt(sos, padded)
    y = backend.sosfilt(sos, y[:, ::-1].copy())[:, ::-1]
    y = y[:, pad:pad + n]
    out_dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    return np.ascontiguousarray(y.reshape(x.shape), dtype=out_dtype)


def clip_signal(x: np.ndarray, limit_uv: float = 1024.0) -> np.ndarray:
    """Clamp amplitudes into [-limit_uv, +limit_uv]."""
    if limit_uv <= 0:
        raise ValueError(f"limit_uv must be positive, got {limit_uv}")
    return np.clip(x, -limit_uv, limit_uv)


def _crop_indices(n: int, rate_hz: float, span_s: float, shift_s: float):
    if abs(shift_s) > 5.0:
        raise ValueError(f"|shift_s| must be <= 5 seconds, got {shift_s}")
    n_span = int(round(span_s * rate_hz))
    if n_span < 1:
        raise ValueError(f"span_s {span_s} shorter than one sample")
    start = int(round(n / 2.0 + shift_s * rate_hz - n_span / 2.0))
    if start < 0 or start + n_span > n:
        raise ValueError(
            f"crop of {span_s} s shifted by {shift_s} s exceeds window bounds "
            f"({n} samples at {rate_hz} Hz)"
        )
    return start, start + n_span


def crop_center(obj, span_s: float, shift_s: float = 0.0):
    """Cut a centered span (optionally shifted) out of a window or montage.

    Returns the same type as the input with t0_s advanced to the crop start.
    """
    if isinstance(obj, EegWindow):
        lo, hi = _crop_indices(obj.n_samples, obj.rate_hz, span_s, shift_s)
        return replace(
            obj,
            samples=np.ascontiguousarray(obj.samples[:, lo:hi]),
            t0_s=obj.t0_s + lo / obj.rate_hz,
        )
    if isinstance(obj, MontageSignals):
        lo, hi = _crop_indices(obj.n_samples, obj.rate_hz, span_s, shift_s)
        return replace(
            obj,
            chains=np.ascontiguousarray(obj.chains[:, :, lo:hi]),
            t0_s=obj.t0_s + lo / obj.rate_hz,
        )
    raise TypeError(f"cannot crop object of type {type(obj).__name__}")


def _finite_or_raise(data: np.ndarray, electrodes, path):
    if np.all(np.isfinite(data)):
        return
    t, ch = np.argwhere(~np.isfinite(data))[0]
    raise LoadError(
        f"{path}: non-finite value at channel {ch} "
        f"({electrodes[ch]!r}), sample {t}"
    )


def _load_csv(path, rate_hz: float) -> tuple[np.ndarray, tuple[str, ...]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        electrodes = tuple(name.strip() for name in header)
        if any(not e for e in electrodes):
            raise LoadError(f"{path}: blank column name in header")
        rows = []
        for i, row in enumerate(reader):
            if len(row) != len(electrodes):
                raise LoadError(
                    f"{path}: row {i} has {len(row)} fields, header has "
                    f"{len(electrodes)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise LoadError(f"{path}: non-numeric value in row {i}") from None
    if not rows:
        raise LoadError(f"{path}: zero samples")
    data = np.asarray(rows, dtype=np.float64)
    _finite_or_raise(data, electrodes, path)
    return np.ascontiguousarray(data.T, dtype=np.float32), electrodes


def _load_raw(path) -> tuple[np.ndarray, tuple[str, ...], dict]:
    import os

    sidecar = os.path.splitext(str(path))[0] + ".json"
    if not os.path.exists(sidecar):
        raise LoadError(f"{path}: missing sidecar {sidecar}")
    with open(sidecar, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("rate_hz", "electrodes"):
        if key not in meta:
            raise LoadError(f"{sidecar}: missing required key {key!r}")
    electrodes = tuple(str(e) for e in meta["electrodes"])
    payload = np.fromfile(str(path), dtype="<f4")
    n_ch = len(electrodes)
    if payload.size == 0:
        raise LoadError(f"{path}: zero samples")
    if payload.size % n_ch != 0:
        raise LoadError(
            f"{path}: payload of {payload.size} values does not divide by "
            f"{n_ch} channels"
        )
    n_samp = payload.size // n_ch
    declared = meta.get("n_samples")
    if declared is not None and int(declared) != n_samp:
        raise LoadError(
            f"{path}: sidecar declares {declared} samples, payload holds {n_samp}"
        )
    data = payload.reshape(n_ch, n_samp).astype(np.float32)
    _finite_or_raise(data.T, electrodes, path)
    return data, electrodes, meta


def _load_parquet(path) -> tuple[np.ndarray, tuple[str, ...]]:
    try:
        import polars as pl
    except ImportError:
        raise LoadError(
            f"{path}: parquet support requires the optional polars dependency"
        ) from None
    frame = pl.read_parquet(str(path))
    electrodes = tuple(frame.columns)
    data = frame.to_numpy().astype(np.float64)
    if data.shape[0] == 0:
        raise LoadError(f"{path}: zero samples")
    _finite_or_raise(data, electrodes, path)
    return np.ascontiguousarray(data.T, dtype=np.float32), electrodes


def save_raw(window: EegWindow, path) -> None:
    """Write a window as little-endian float32 channel-major plus JSON sidecar."""
    import os

    window.samples.astype("<f4").tofile(str(path))
    sidecar = os.path.splitext(str(path))[0] + ".json"
    meta = {
        "rate_hz": window.rate_hz,
        "electrodes": list(window.electrodes),
        "eeg_id": window.eeg_id,
        "t0_s": window.t0_s,
        "n_samples": window.n_samples,
    }
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def load_eeg_window(
    path,
    rate_hz: float = 200.0,
    eeg_id: str | None = None,
    fmt: str | None = None,
) -> EegWindow:
    """Read one EEG window from CSV, raw float32 + JSON sidecar, or parquet.

    The format is inferred from the extension unless fmt is given.  CSV and
    parquet carry electrode names in their header/schema and take the rate
    from the rate_hz argument; the raw format reads rate, names, and
    provenance from its sidecar.
    """
    p = str(path)
    if fmt is None:
        ext = p.rsplit(".", 1)[-1].lower() if "." in p else ""
        fmt = {"csv": "csv", "parquet": "parquet",
               "f32": "raw", "raw": "raw", "bin": "raw"}.get(ext)
        if fmt is None:
            raise LoadError(f"{path}: cannot infer format from extension {ext!r}")
    import os

    stem = os.path.splitext(os.path.basename(p))[0]
    if fmt == "csv":
        data, electrodes = _load_csv(p, rate_hz)
        return EegWindow(data, rate_hz, electrodes, eeg_id=eeg_id or stem)
    if fmt == "raw":
        data, electrodes, meta = _load_raw(p)
        return EegWindow(
            data,
            float(meta["rate_hz"]),
            electrodes,
            eeg_id=eeg_id or str(meta.get("eeg_id", stem)),
            t0_s=float(meta.get("t0_s", 0.0)),
        )
    if fmt == "parquet":
        data, electrodes = _load_parquet(p)
        return EegWindow(data, rate_hz, electrodes, eeg_id=eeg_id or stem)
    raise LoadError(f"{path}: unknown format {fmt!r}")
