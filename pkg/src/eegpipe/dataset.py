"""Label manifests, vote targets, patient-grouped folds, synthetic data.

Every record carries six expert vote counts in the fixed class order
(seizure, lpd, gpd, lrda, grda, other).  Targets are normalized vote
distributions; the consensus label is the argmax with ties broken toward
the lower class index.  Fold planning keeps all records of a patient in
one fold.  The synthetic generator produces separable desk-scale EEG with
a controllable rate of wrong labels on low-vote rows.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import LoadError
from .signals import STANDARD_ELECTRODES, EegWindow

CLASSES = ("seizure", "lpd", "gpd", "lrda", "grda", "other")
N_CLASSES = len(CLASSES)
VOTE_COLUMNS = tuple(f"{c}_vote" for c in CLASSES)
MANIFEST_COLUMNS = (
    "eeg_id", "spectrogram_id", "patient_id", "eeg_offset_s",
) + VOTE_COLUMNS

LEFT_ELECTRODES = ("Fp1", "F3", "C3", "P3", "F7", "T3", "T5", "O1")
RIGHT_ELECTRODES = ("Fp2", "F4", "C4", "P4", "F8", "T4", "T6", "O2")
MIDLINE_ELECTRODES = ("Fz", "Cz", "Pz")


@dataclass(frozen=True)
class LabelRecord:
    """One labeled window with its expert vote counts."""

    eeg_id: str
    spectrogram_id: str
    patient_id: str
    eeg_offset_s: float
    votes: tuple[int, int, int, int, int, int]

    def __post_init__(self):
        if len(self.votes) != N_CLASSES:
            raise ValueError(f"expected {N_CLASSES} votes, got {len(self.votes)}")
        if any(v < 0 for v in self.votes):
            raise ValueError(f"negative vote count in {self.votes}")
        if sum(self.votes) < 1:
            raise ValueError("total votes must be >= 1")
        object.__setattr__(self, "votes", tuple(int(v) for v in self.votes))

    @property
    def total_votes(self) -> int:
        return sum(self.votes)

    @property
    def consensus_class(self) -> int:
        """Index of the maximal vote; ties go to the lower class index."""
        return int(np.argmax(self.votes))

    @property
    def consensus_name(self) -> str:
        return CLASSES[self.consensus_class]


def vote_distribution(record: LabelRecord) -> np.ndarray:
    """Votes normalized to a probability vector over the 6 classes."""
    v = np.asarray(record.votes, dtype=np.float64)
    return v / v.sum()


def parse_manifest(path) -> list[LabelRecord]:
    """Read label records from a manifest CSV.

    Rows with malformed votes (non-integer, negative, or all zero) abort
    the parse with the offending row number.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise LoadError(f"{path}: empty manifest")
        missing = [c for c in MANIFEST_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise LoadError(f"{path}: manifest missing columns {missing}")
        records = []
        for i, row in enumerate(reader):
            votes = []
            for col in VOTE_COLUMNS:
                raw = (row[col] or "").strip()
                try:
                    v = int(raw)
                except ValueError:
                    raise LoadError(
                        f"{path}: row {i}: vote column {col} holds "
                        f"non-integer value {raw!r}"
                    ) from None
                if v < 0:
                    raise LoadError(
                        f"{path}: row {i}: negative vote {v} in column {col}"
                    )
                votes.append(v)
            if sum(votes) < 1:
                raise LoadError(f"{path}: row {i}: all six vote counts are zero")
            try:
                offset = float(row["eeg_offset_s"])
            except ValueError:
                raise LoadError(
                    f"{path}: row {i}: eeg_offset_s is not numeric"
                ) from None
            records.append(LabelRecord(
                eeg_id=row["eeg_id"].strip(),
                spectrogram_id=row["spectrogram_id"].strip(),
                patient_id=row["patient_id"].strip(),
                eeg_offset_s=offset,
                votes=tuple(votes),
            ))
    return records


def write_manifest(records, path) -> None:
    """Inverse of parse_manifest."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow(
                [r.eeg_id, r.spectrogram_id, r.patient_id,
                 repr(float(r.eeg_offset_s))] + list(r.votes)
            )


def filter_high_confidence(records, min_votes: int = 10) -> list[LabelRecord]:
    """Records with at least min_votes total votes, order preserved."""
    return [r for r in records if r.total_votes >= min_votes]


@dataclass(frozen=True)
class FoldPlan:
    """Record-to-fold assignment that never splits a patient."""

    k: int
    seed: int
    assignment: np.ndarray
    patient_folds: dict[str, int]

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("assignment must be 1-D")
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValueError("fold ids must lie in [0, k)")
        object.__setattr__(self, "assignment", a)

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def group_kfold(records, k: int = 5, seed: int = 0) -> FoldPlan:
    """Assign whole patients to k folds, balancing record counts.

    Patients are shuffled by seed, stably ordered by descending record
    count, and each is placed on the currently lightest fold (lowest fold
    id on ties).
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    counts: dict[str, int] = {}
    for r in records:
        counts[r.patient_id] = counts.get(r.patient_id, 0) + 1
    patients = sorted(counts)
    if len(patients) < k:
        raise ValueError(
            f"{len(patients)} distinct patients cannot fill {k} folds"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(patients))
    shuffled = [patients[i] for i in order]
    shuffled.sort(key=lambda p: -counts[p])  # stable: shuffle breaks ties
    load = [0] * k
    patient_folds: dict[str, int] = {}
    for p in shuffled:
        fold = int(np.argmin(load))
        patient_folds[p] = fold
        load[fold] += counts[p]
    assignment = np.asarray(
        [patient_folds[r.patient_id] for r in records], dtype=np.int64
    )
    return FoldPlan(k=k, seed=seed, assignment=assignment,
                    patient_folds=patient_folds)


def save_fold_plan(plan: FoldPlan, path) -> None:
    doc = {"seed": plan.seed, "k": plan.k,
           "patient_folds": dict(sorted(plan.patient_folds.items()))}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_fold_plan(path, records) -> FoldPlan:
    """Rebuild a FoldPlan for the given records from an exported JSON."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    folds = {str(p): int(f) for p, f in doc["patient_folds"].items()}
    missing = sorted({r.patient_id for r in records} - set(folds))
    if missing:
        raise LoadError(f"{path}: no fold recorded for patients {missing}")
    assignment = np.asarray([folds[r.patient_id] for r in records],
                            dtype=np.int64)
    return FoldPlan(k=int(doc["k"]), seed=int(doc["seed"]),
                    assignment=assignment, patient_folds=folds)


def stage2_ramp(epoch: int, n_epochs: int) -> float:
    """Linear 1.0 -> 0.25 floor over the stage-2 epochs."""
    if n_epochs <= 1:
        return 1.0
    e = min(max(epoch, 0), n_epochs - 1)
    return 1.0 - 0.75 * e / (n_epochs - 1)


def sample_weight(
    record: LabelRecord, stage: int, epoch: int, n_epochs: int = 15
) -> float:
    """Loss weight for one record at one training epoch.

    Stage 1 trains only high-confidence rows, all at weight 1.  Stage 2
    keeps high-vote rows at 1 and lets low-vote rows decay from 1 toward
    votes/10, never below the 0.25 ramp floor.
    """
    if stage == 1:
        return 1.0
    if stage != 2:
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    confidence = min(1.0, record.total_votes / 10.0)
    return max(stage2_ramp(epoch, n_epochs), confidence)


# ---------------------------------------------------------------------------
# Synthetic data

_PULSE_SIGMA_S = 0.018


def _archetype_wave(class_idx: int, t: np.ndarray, phase: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Unit-scale oscillation signature for one class over time axis t."""
    name = CLASSES[class_idx]
    if name == "seizure":
        # 3 Hz with strong harmonics.
        return (np.sin(2 * np.pi * 3.0 * t + phase)
                + 0.5 * np.sin(2 * np.pi * 6.0 * t + 2 * phase)
                + 0.25 * np.sin(2 * np.pi * 9.0 * t + 3 * phase))
    if name in ("lpd", "gpd"):
        # 5 Hz train of narrow discharges.
        period = 0.2
        offs = (t + phase / (2 * np.pi) * period) % period - period / 2
        return 1.6 * np.exp(-0.5 * (offs / _PULSE_SIGMA_S) ** 2) - 0.3
    if name in ("lrda", "grda"):
        return 1.2 * np.sin(2 * np.pi * 1.5 * t + phase)
    # "other": narrowband activity near 8 Hz with a noisy envelope.
    env = 1.0 + 0.5 * np.sin(2 * np.pi * 0.7 * t + 3 * phase)
    carrier = np.sin(2 * np.pi * 8.0 * t + phase)
    return 0.9 * env * carrier + 0.3 * rng.standard_normal(t.size)


def _side_factor(class_idx: int, electrode: str) -> float:
    lateralized = CLASSES[class_idx] in ("lpd", "lrda")
    if electrode in LEFT_ELECTRODES:
        return 1.0
    if electrode in RIGHT_ELECTRODES:
        return 0.15 if lateralized else 1.0
    if electrode in MIDLINE_ELECTRODES:
        return 0.55 if lateralized else 0.8
    return 0.0  # EKG and anything non-scalp


def _draw_votes(class_idx: int, noise_level: float,
                rng: np.random.Generator,
                high_vote_frac: float = 0.5) -> tuple[tuple[int, ...], bool]:
    """Vote counts for one row; returns (votes, is_high_confidence)."""
    votes = [0] * N_CLASSES
    high = rng.random() < high_vote_frac
    if high:
        total = int(rng.integers(10, 19))
        spread = int(rng.integers(0, 3))
        votes[class_idx] = total - spread
        if spread:
            other = int(rng.integers(0, N_CLASSES - 1))
            other += other >= class_idx
            votes[other] = spread
        return tuple(votes), True
    total = int(rng.integers(2, 7))
    if rng.random() < noise_level:
        wrong = int(rng.integers(0, N_CLASSES - 1))
        wrong += wrong >= class_idx
        votes[wrong] = int(np.ceil(0.7 * total))
        votes[class_idx] = total - votes[wrong]
    else:
        votes[class_idx] = total
    return tuple(votes), False


def synth_dataset(
    n_patients: int,
    rows_per_patient: int,
    noise_level: float = 0.0,
    seed: int = 0,
    rate_hz: float = 200.0,
    duration_s: float = 60.0,
    class_archetypes=None,
    noise_uv: float = 2.0,
    amplitude_uv: float = 40.0,
    high_vote_frac: float = 0.5,
) -> tuple[list[EegWindow], list[LabelRecord]]:
    """Deterministic synthetic EEG windows with vote labels.

    Each record injects one class archetype into the central 10 s of a
    buffer, on top of white background noise, with per-(class, electrode)
    gains drawn once per dataset so bipolar differentials stay informative.
    A high_vote_frac share of rows gets >= 10 votes concentrated on the
    true class; the rest get 2-6 votes, flipped to a wrong class with
    probability noise_level.
    """
    classes = (tuple(range(N_CLASSES)) if class_archetypes is None
               else tuple(CLASSES.index(c) for c in class_archetypes))
    if len(classes) < 2:
        raise ValueError("need at least 2 classes")
    if not (0.0 <= noise_level <= 1.0):
        raise ValueError(f"noise_level must be in [0, 1], got {noise_level}")
    if not (0.0 <= high_vote_frac <= 1.0):
        raise ValueError(
            f"high_vote_frac must be in [0, 1], got {high_vote_frac}")
    electrodes = STANDARD_ELECTRODES + ("EKG",)
    rng = np.random.default_rng(seed)
    gains = rng.uniform(0.3, 1.0, size=(N_CLASSES, len(electrodes)))
    n_samples = int(round(duration_s * rate_hz))
    n_core = int(round(10.0 * rate_hz))
    lo = (n_samples - n_core) // 2
    t_core = np.arange(n_core) / rate_hz
    ramp_n = max(int(round(0.25 * rate_hz)), 1)
    taper = np.ones(n_core)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp_n) / ramp_n)
    taper[:ramp_n] = ramp
    taper[-ramp_n:] = ramp[::-1]

    windows: list[EegWindow] = []
    records: list[LabelRecord] = []
    idx = 0
    for pi in range(n_patients):
        patient_id = f"p{pi:04d}"
        for _ in range(rows_per_patient):
            class_idx = int(classes[rng.integers(0, len(classes))])
            phase = float(rng.uniform(0.0, 2.0 * np.pi))
            jitter = float(rng.uniform(0.8, 1.25))
            wave = _archetype_wave(class_idx, t_core, phase, rng) * taper
            data = noise_uv * rng.standard_normal(
                (len(electrodes), n_samples)
            )
            for ei, name in enumerate(electrodes):
                amp = (amplitude_uv * jitter * gains[class_idx, ei]
                       * _side_factor(class_idx, name))
                if amp:
                    data[ei, lo:lo + n_core] += amp * wave
            votes, _ = _draw_votes(class_idx, noise_level, rng,
                                   high_vote_frac)
            eeg_id = f"eeg{idx:05d}"
            windows.append(EegWindow(
                samples=data.astype(np.float32),
                rate_hz=rate_hz,
                electrodes=electrodes,
                eeg_id=eeg_id,
            ))
            records.append(LabelRecord(
                eeg_id=eeg_id,
                spectrogram_id=f"spg{idx:05d}",
                patient_id=patient_id,
                eeg_offset_s=(duration_s - 50.0) / 2.0 if duration_s >= 50.0
                else 0.0,
                votes=votes,
            ))
            idx += 1
    return windows, records
