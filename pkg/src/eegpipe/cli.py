"""Command-line front end wiring the pipeline stages together.

Subcommands cover the full path from synthetic data generation through
preprocessing, spectrogram caching, fold splitting, cross-validated
training, and report generation.  Every command exits 0 on success and
2 with a single-line diagnostic on failure.  File outputs go through a
temp-file-plus-rename step so a crash never leaves a partial artifact,
and expensive caches are keyed by a content hash of the inputs and the
parameters so reruns skip work that is already on disk.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from .config import PipelineConfig, load_config, resolved_dict
from .cwt import build_spec_hr, build_spec_lr, scales_for_band, save_spectrogram_set
from .dataset import (
    CLASSES,
    group_kfold,
    load_fold_plan,
    parse_manifest,
    save_fold_plan,
    synth_dataset,
    write_manifest,
)
from .errors import LoadError, PipelineError
from .evaluate import (
    confusion_csv_text,
    cross_validate,
    emit_report,
    save_report,
    _atomic_write_text,
)
from .features import FeatureConfig, MODEL_FEATURE_KINDS, build_training_data
from .nn import BUILDERS, build_eegnet, build_mlp, build_multimodal, grad_check
from .signals import (
    EegWindow,
    MontageSignals,
    apply_montage,
    bandpass_filter,
    clip_signal,
    crop_center,
)
from .train import TrainHistory, run_cv

WINDOWS_SCHEMA = "windows/1"
TRAINABLE_MODELS = ("eegnet", "mlp", "multimodal")
STRATEGY_CHOICES = ("two-stage", "single-stage")


# ---------------------------------------------------------------------------
# small file helpers


def _atomic_bytes(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise PipelineError(f"cannot write {path}: {exc}") from exc


def _content_tag(params: tuple, payload: bytes) -> str:
    h = hashlib.sha256()
    h.update(repr(params).encode("utf-8"))
    h.update(payload)
    return h.hexdigest()[:16]


def _window_bytes(w: EegWindow) -> bytes:
    return np.ascontiguousarray(w.samples, dtype="<f4").tobytes()


def _index_path(data_dir: str) -> str:
    return os.path.join(data_dir, "windows.json")


def _manifest_path(data_dir: str) -> str:
    return os.path.join(data_dir, "manifest.csv")


def _save_windows(windows, data_dir: str, seed: int) -> None:
    win_dir = os.path.join(data_dir, "windows")
    os.makedirs(win_dir, exist_ok=True)
    entries = []
    for w in windows:
        rel = os.path.join("windows", f"{w.eeg_id}.f32")
        _atomic_bytes(os.path.join(data_dir, rel), _window_bytes(w))
        entries.append({
            "eeg_id": w.eeg_id,
            "file": rel,
            "n_samples": int(w.samples.shape[1]),
            "t0_s": float(w.t0_s),
        })
    index = {
        "schema": WINDOWS_SCHEMA,
        "seed": int(seed),
        "rate_hz": float(windows[0].rate_hz),
        "electrodes": list(windows[0].electrodes),
        "windows": entries,
    }
    _atomic_write_text(_index_path(data_dir),
                       json.dumps(index, indent=1, sort_keys=True) + "\n")


def _load_windows(data_dir: str) -> list:
    index_path = _index_path(data_dir)
    if not os.path.exists(index_path):
        raise PipelineError(
            f"window index not found: {index_path} (run `eegpipe synth` "
            f"or point paths.data_dir at an existing dataset)")
    with open(index_path, encoding="utf-8") as fh:
        index = json.load(fh)
    if index.get("schema") != WINDOWS_SCHEMA:
        raise LoadError(
            f"{index_path}: unsupported schema {index.get('schema')!r}")
    electrodes = tuple(index["electrodes"])
    rate_hz = float(index["rate_hz"])
    windows = []
    for entry in index["windows"]:
        path = os.path.join(data_dir, entry["file"])
        n_samples = int(entry["n_samples"])
        expected = len(electrodes) * n_samples * 4
        try:
            actual = os.path.getsize(path)
        except OSError:
            raise LoadError(f"{path}: window file missing") from None
        if actual != expected:
            raise LoadError(
                f"{path}: expected {expected} bytes "
                f"({len(electrodes)} x {n_samples} float32), found {actual}")
        samples = np.fromfile(path, dtype="<f4").reshape(
            len(electrodes), n_samples)
        windows.append(EegWindow(
            samples=samples.astype(np.float64),
            rate_hz=rate_hz,
            electrodes=electrodes,
            eeg_id=str(entry["eeg_id"]),
            t0_s=float(entry.get("t0_s", 0.0)),
        ))
    return windows


def _filtered_cropped(w: EegWindow, fc: FeatureConfig) -> MontageSignals:
    """Montage, clip, zero-phase bandpass, then center crop to span_s."""
    ms = apply_montage(w)
    chains = bandpass_filter(
        clip_signal(ms.chains, fc.clip_uv), w.rate_hz,
        fc.low_hz, fc.high_hz, fc.filter_order)
    ms = MontageSignals(chains=chains, rate_hz=ms.rate_hz,
                        eeg_id=ms.eeg_id, t0_s=ms.t0_s)
    return crop_center(ms, fc.span_s)


def _require_manifest(data_dir: str):
    path = _manifest_path(data_dir)
    if not os.path.exists(path):
        raise PipelineError(
            f"manifest not found: {path} (run `eegpipe synth` first)")
    return parse_manifest(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    s = cfg.synth
    windows, records = synth_dataset(
        n_patients=s.n_patients,
        rows_per_patient=s.rows_per_patient,
        noise_level=s.noise_level,
        seed=cfg.seed,
        rate_hz=s.rate_hz,
        duration_s=s.duration_s,
        noise_uv=s.noise_uv,
        amplitude_uv=s.amplitude_uv,
        high_vote_frac=s.high_vote_frac,
    )
    data_dir = cfg.paths.data_dir
    os.makedirs(data_dir, exist_ok=True)
    _save_windows(windows, data_dir, cfg.seed)
    tmp = _manifest_path(data_dir) + ".tmp"
    write_manifest(records, tmp)
    os.replace(tmp, _manifest_path(data_dir))
    print(f"synth: {len(windows)} windows, {len(records)} records "
          f"-> {data_dir}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    fc = cfg.features
    windows = _load_windows(cfg.paths.data_dir)
    out_dir = os.path.join(cfg.cache_dir(), "preprocess")
    os.makedirs(out_dir, exist_ok=True)
    params = ("preprocess/1", fc.span_s, fc.low_hz, fc.high_hz,
              fc.filter_order, fc.clip_uv)
    written = skipped = 0
    for w in windows:
        tag = _content_tag(params, _window_bytes(w))
        path = os.path.join(out_dir, f"{w.eeg_id}-{tag}.f32")
        if os.path.exists(path):
            skipped += 1
            continue
        ms = _filtered_cropped(w, fc)
        _atomic_bytes(path, np.ascontiguousarray(
            ms.as_matrix(), dtype="<f4").tobytes())
        written += 1
    print(f"preprocess: {written} written, {skipped} up to date "
          f"-> {out_dir}")
    return 0


def cmd_spectrogram(args) -> int:
    cfg = load_config(args.config)
    fc = cfg.features
    windows = _load_windows(cfg.paths.data_dir)
    sub = "spec_hr" if args.mode == "hr" else "spec_lr"
    out_dir = os.path.join(cfg.cache_dir(), sub)
    os.makedirs(out_dir, exist_ok=True)
    if args.mode == "hr":
        params = ("spec_hr/1", fc.span_s, fc.low_hz, fc.high_hz,
                  fc.filter_order, fc.clip_uv, fc.cwt_f_min, fc.cwt_f_max,
                  fc.cwt_n_scales, fc.cwt_stride)
    else:
        params = ("spec_lr/1", fc.low_hz, fc.high_hz, fc.clip_uv)
    written = skipped = 0
    for w in windows:
        tag = _content_tag(params, _window_bytes(w))
        stem = f"{w.eeg_id}-{tag}"
        data_path = os.path.join(out_dir, f"{stem}.f32")
        meta_path = os.path.join(out_dir, f"{stem}.json")
        if os.path.exists(data_path) and os.path.exists(meta_path):
            skipped += 1
            continue
        if args.mode == "hr":
            ms = _filtered_cropped(w, fc)
            bank = scales_for_band(fc.cwt_f_min, fc.cwt_f_max,
                                   fc.cwt_n_scales, w.rate_hz)
            ss = build_spec_hr(ms, bank, stride=fc.cwt_stride)
        else:
            ss = build_spec_lr(w, clip_uv=fc.clip_uv, low_hz=fc.low_hz,
                               high_hz=fc.high_hz)
        tmp_data, tmp_meta = save_spectrogram_set(ss, out_dir, f"{stem}.tmp")
        os.replace(tmp_data, data_path)
        os.replace(tmp_meta, meta_path)
        written += 1
    print(f"spectrogram[{args.mode}]: {written} written, {skipped} "
          f"up to date -> {out_dir}")
    return 0


def cmd_split(args) -> int:
    cfg = load_config(args.config)
    records = _require_manifest(cfg.paths.data_dir)
    plan = group_kfold(records, k=cfg.folds.k, seed=cfg.seed)
    path = os.path.join(cfg.paths.data_dir, "folds.json")
    save_fold_plan(plan, path + ".tmp")
    os.replace(path + ".tmp", path)
    sizes = [int(plan.fold_indices(f).size) for f in range(plan.k)]
    print(f"split: {plan.k} folds with sizes {sizes} -> {path}")
    return 0


def _model_builder(name: str, data, kwargs: dict):
    shapes = data.model_input_shapes()
    if name == "eegnet":
        base = {"n_channels": shapes["wave"][0],
                "n_samples": shapes["wave"][1]}
        builder = build_eegnet
    elif name == "mlp":
        base = {"input_dim": int(np.prod(shapes["image"]))}
        builder = build_mlp
    elif name == "multimodal":
        base = {"n_channels": shapes["wave"][0],
                "n_samples": shapes["wave"][1],
                "image_shape": tuple(shapes["image"])}
        builder = build_multimodal
    else:
        raise PipelineError(f"model {name!r} cannot be trained directly")
    merged = {**base, **kwargs}

    def build(seed: int):
        return builder(seed=seed, **merged)

    return build


def _write_run_csvs(run_dir: str, result, records) -> None:
    hist_lines = ["fold,stage,epoch,train_loss,val_kl"]
    lr_lines = ["fold,stage,epoch,step,lr"]
    pred_lines = ["fold,row,eeg_id,"
                  + ",".join(f"t{i}" for i in range(len(CLASSES))) + ","
                  + ",".join(f"p{i}" for i in range(len(CLASSES)))]
    for out in result.outcomes:
        for stage, epoch, train_loss, val_kl in out.history.epochs:
            hist_lines.append(
                f"{out.fold},{stage},{epoch},{train_loss!r},{val_kl!r}")
        for stage, epoch, step, lr in out.history.steps:
            lr_lines.append(f"{out.fold},{stage},{epoch},{step},{lr!r}")
        for i, row in enumerate(out.record_idx):
            t = ",".join(repr(float(v)) for v in out.targets[i])
            p = ",".join(repr(float(v)) for v in out.preds[i])
            pred_lines.append(
                f"{out.fold},{int(row)},{records[int(row)].eeg_id},{t},{p}")
    _atomic_write_text(os.path.join(run_dir, "history.csv"),
                       "\n".join(hist_lines) + "\n")
    _atomic_write_text(os.path.join(run_dir, "lr.csv"),
                       "\n".join(lr_lines) + "\n")
    _atomic_write_text(os.path.join(run_dir, "predictions.csv"),
                       "\n".join(pred_lines) + "\n")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    records = _require_manifest(cfg.paths.data_dir)
    windows = _load_windows(cfg.paths.data_dir)
    folds_path = args.folds or os.path.join(cfg.paths.data_dir, "folds.json")
    if not os.path.exists(folds_path):
        raise PipelineError(
            f"folds plan not found: {folds_path} (run `eegpipe split` first)")
    plan = load_fold_plan(folds_path, records)
    model_name = args.model or cfg.model.name
    data = build_training_data(windows, records, model_name, cfg.features,
                               cache_dir=cfg.cache_dir())
    kwargs = dict(cfg.model.kwargs) if model_name == cfg.model.name else {}
    build = _model_builder(model_name, data, kwargs)
    run_dir = args.out
    os.makedirs(run_dir, exist_ok=True)
    result = run_cv(build, data, plan, cfg.train, strategy=args.strategy,
                    run_dir=run_dir)
    doc = resolved_dict(cfg)
    doc["model"]["name"] = model_name
    doc["strategy"] = args.strategy
    _atomic_write_text(os.path.join(run_dir, "resolved_config.json"),
                       json.dumps(doc, indent=1, sort_keys=True) + "\n")
    _write_run_csvs(run_dir, result, records)
    print(f"train[{model_name}/{args.strategy}]: mean KL "
          f"{result.mean_score:.6f} over {plan.k} folds -> {run_dir}")
    return 0


class _CsvFold:
    """Fold outcome rebuilt from predictions.csv for aggregation."""

    def __init__(self, fold: int, preds, targets):
        self.fold = fold
        self.preds = np.asarray(preds, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)


def _read_predictions(run_dir: str) -> list[_CsvFold]:
    path = os.path.join(run_dir, "predictions.csv")
    if not os.path.exists(path):
        raise PipelineError(
            f"predictions not found: {path} (run `eegpipe train` first)")
    k = len(CLASSES)
    by_fold: dict[int, tuple[list, list]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = 3 + 2 * k
        if header is None or len(header) != expected:
            raise LoadError(f"{path}: malformed predictions header")
        for line in reader:
            if len(line) != expected:
                raise LoadError(
                    f"{path}: row with {len(line)} fields, expected "
                    f"{expected}")
            fold = int(line[0])
            targets = [float(v) for v in line[3:3 + k]]
            preds = [float(v) for v in line[3 + k:]]
            t_list, p_list = by_fold.setdefault(fold, ([], []))
            t_list.append(targets)
            p_list.append(preds)
    return [_CsvFold(fold, preds, targets)
            for fold, (targets, preds) in sorted(by_fold.items())]


def _read_histories(run_dir: str) -> list[TrainHistory] | None:
    hist_path = os.path.join(run_dir, "history.csv")
    lr_path = os.path.join(run_dir, "lr.csv")
    if not (os.path.exists(hist_path) and os.path.exists(lr_path)):
        return None
    histories: dict[int, TrainHistory] = {}

    def hist_for(fold: int) -> TrainHistory:
        return histories.setdefault(fold, TrainHistory())

    with open(hist_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for fold, stage, epoch, train_loss, val_kl in reader:
            hist_for(int(fold)).epochs.append(
                (stage, int(epoch), float(train_loss), float(val_kl)))
    with open(lr_path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for fold, stage, epoch, step, lr in reader:
            hist_for(int(fold)).steps.append(
                (stage, int(epoch), int(step), float(lr)))
    return [histories[f] for f in sorted(histories)]


def _run_metadata(run_dir: str) -> dict:
    path = os.path.join(run_dir, "resolved_config.json")
    if not os.path.exists(path):
        return {}
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return {
        "seed": doc.get("seed"),
        "model": doc.get("model", {}).get("name"),
        "strategy": doc.get("strategy"),
        "folds": doc.get("folds", {}).get("k"),
    }


def cmd_evaluate(args) -> int:
    outcomes = _read_predictions(args.run)
    report = cross_validate(outcomes, metadata=_run_metadata(args.run))
    out_dir = args.out or args.run
    paths = emit_report(report, out_dir, histories=_read_histories(args.run))
    print(f"evaluate: mean KL {report.mean_score:.6f} over "
          f"{len(report.fold_scores)} folds -> {paths['report']}")
    return 0


def cmd_report(args) -> int:
    outcomes = _read_predictions(args.run)
    report = cross_validate(outcomes, metadata=_run_metadata(args.run))
    out_dir = args.out or args.run
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "report.json")
    save_report(report, report_path)
    _atomic_write_text(os.path.join(out_dir, "confusion.csv"),
                       confusion_csv_text(report))
    print(f"report: mean KL {report.mean_score:.6f} -> {report_path}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    checks = []

    mlp = build_mlp(input_dim=24, hidden=(8, 8), dropout_p=0.0,
                    seed=args.seed, dtype="float64")
    x = rng.normal(size=(4, 24))
    checks.append(("mlp", mlp, x))

    net = build_eegnet(n_channels=4, n_samples=64, f1=2, depth_mult=1,
                       f2=2, temporal_k=8, sep_k=4, dropout_p=0.0,
                       seed=args.seed, dtype="float64")
    x = rng.normal(size=(2, 4, 64))
    checks.append(("eegnet", net, x))

    worst = 0.0
    for name, model, batch in checks:
        t = rng.dirichlet(np.ones(len(CLASSES)), size=batch.shape[0])
        err = grad_check(model, batch, t, max_evals=300,
                         rng=np.random.default_rng(args.seed))
        worst = max(worst, err)
        print(f"gradcheck[{name}]: max relative error {err:.3e}")
    if worst >= 1e-3:
        raise PipelineError(
            f"gradient check failed: max relative error {worst:.3e}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegpipe",
        description="EEG activity classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True,
                       help="TOML or JSON pipeline configuration")
        return p

    p = with_config(sub.add_parser(
        "synth", help="generate a synthetic labelled dataset"))
    p.set_defaults(func=cmd_synth)

    p = with_config(sub.add_parser(
        "preprocess", help="cache filtered montage waveform segments"))
    p.set_defaults(func=cmd_preprocess)

    p = with_config(sub.add_parser(
        "spectrogram", help="cache wavelet spectrogram sets"))
    p.add_argument("--mode", choices=("hr", "lr"), default="hr")
    p.set_defaults(func=cmd_spectrogram)

    p = with_config(sub.add_parser(
        "split", help="write the patient-grouped fold plan"))
    p.set_defaults(func=cmd_split)

    p = with_config(sub.add_parser(
        "train", help="cross-validated training run"))
    p.add_argument("--model", choices=TRAINABLE_MODELS, default=None,
                   help="architecture (default: the config's model.name)")
    p.add_argument("--strategy", choices=STRATEGY_CHOICES,
                   default="two-stage")
    p.add_argument("--folds", default=None,
                   help="fold plan JSON (default: <data_dir>/folds.json)")
    p.add_argument("--out", required=True, help="run artifact directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate",
                       help="aggregate a run into report, CSV, and plots")
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--out", default=None,
                   help="report directory (default: the run directory)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report",
                       help="regenerate report JSON and confusion CSV")
    p.add_argument("--run", required=True, help="training run directory")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck",
                       help="numeric gradient check on small models")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (PipelineError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
