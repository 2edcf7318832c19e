"""Fold-wise KL scoring, confusion matrices, and report emission.

Aggregation is mean-of-fold-means: every record is scored once by the
model that held it out, each fold contributes its own mean KL, and the
overall score averages the folds.  The report states this choice so
downstream readers never have to guess.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import CLASSES
from .errors import PipelineError
from .nn.losses import kl_divergence

SCHEMA = "eval/1"
AGGREGATION = "mean-of-fold-means"


def mean_kl(preds: np.ndarray, targets: np.ndarray) -> float:
    """Unweighted mean KL(target_i || pred_i) over rows."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(
            f"preds shape {preds.shape} != targets shape {targets.shape}")
    if preds.ndim != 2 or preds.shape[0] < 1:
        raise ValueError(f"need a non-empty (n, k) batch, got {preds.shape}")
    return float(np.mean(kl_divergence(targets, preds)))


def confusion_matrix(preds: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Counts[i, j] = rows with argmax(target) = i and argmax(pred) = j.

    Ties resolve to the lowest class index on both axes, matching the
    consensus rule used for labels.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise ValueError(
            f"preds shape {preds.shape} != targets shape {targets.shape}")
    k = preds.shape[1]
    true_ix = np.argmax(targets, axis=1)
    pred_ix = np.argmax(preds, axis=1)
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (true_ix, pred_ix), 1)
    return out


@dataclass(frozen=True)
class EvalReport:
    """Aggregated cross-validation scores plus pooled confusion counts."""

    fold_scores: tuple
    mean_score: float
    std_score: float
    confusion: tuple              # k rows of k int counts
    class_counts: tuple           # ground-truth rows per class
    classes: tuple = CLASSES
    schema: str = SCHEMA
    aggregation: str = AGGREGATION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        k = len(self.classes)
        if len(self.confusion) != k or any(len(r) != k
                                           for r in self.confusion):
            raise ValueError(f"confusion matrix must be {k}x{k}")
        row_sums = tuple(int(sum(r)) for r in self.confusion)
        if row_sums != tuple(self.class_counts):
            raise ValueError(
                f"confusion row sums {row_sums} != class counts "
                f"{tuple(self.class_counts)}")

    @property
    def n_rows(self) -> int:
        return int(sum(self.class_counts))


def cross_validate(outcomes, metadata: dict | None = None) -> EvalReport:
    """Aggregate per-fold predictions into one report.

    outcomes is any iterable of objects carrying fold, preds, and
    targets (run_cv's FoldOutcome fits).  Fold ids must cover
    0..n_folds-1 exactly once.
    """
    outcomes = list(outcomes)
    by_fold = {int(o.fold): o for o in outcomes}
    if not by_fold:
        raise PipelineError("no fold outcomes to aggregate")
    if len(by_fold) != len(outcomes):
        raise PipelineError("duplicate fold ids in outcomes")
    n_folds = max(by_fold) + 1
    missing = [f for f in range(n_folds) if f not in by_fold]
    if missing:
        raise PipelineError(f"missing fold {missing[0]}")
    scores = []
    pooled = np.zeros((len(CLASSES), len(CLASSES)), dtype=np.int64)
    for f in range(n_folds):
        o = by_fold[f]
        scores.append(mean_kl(o.preds, o.targets))
        pooled += confusion_matrix(o.preds, o.targets)
    return EvalReport(
        fold_scores=tuple(scores),
        mean_score=float(np.mean(scores)),
        std_score=float(np.std(scores)),
        confusion=tuple(tuple(int(v) for v in row) for row in pooled),
        class_counts=tuple(int(v) for v in pooled.sum(axis=1)),
        metadata=dict(metadata or {}),
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        "schema": report.schema,
        "aggregation": report.aggregation,
        "classes": list(report.classes),
        "fold_scores": list(report.fold_scores),
        "mean_score": report.mean_score,
        "std_score": report.std_score,
        "confusion": [list(row) for row in report.confusion],
        "class_counts": list(report.class_counts),
        "metadata": report.metadata,
    }


def report_from_dict(d: dict) -> EvalReport:
    if d.get("schema") != SCHEMA:
        raise PipelineError(
            f"unsupported report schema {d.get('schema')!r}")
    return EvalReport(
        fold_scores=tuple(float(s) for s in d["fold_scores"]),
        mean_score=float(d["mean_score"]),
        std_score=float(d["std_score"]),
        confusion=tuple(tuple(int(v) for v in row)
                        for row in d["confusion"]),
        class_counts=tuple(int(v) for v in d["class_counts"]),
        classes=tuple(d["classes"]),
        aggregation=d.get("aggregation", AGGREGATION),
        metadata=dict(d.get("metadata", {})),
    )


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise PipelineError(f"cannot write {path}: {exc}") from exc


def save_report(report: EvalReport, path: str) -> None:
    _atomic_write_text(path, json.dumps(report_to_dict(report), indent=1,
                                        sort_keys=True) + "\n")


def load_report(path: str) -> EvalReport:
    try:
        with open(path, encoding="utf-8") as fh:
            return report_from_dict(json.load(fh))
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise PipelineError(f"corrupt report JSON {path}: {exc}") from exc


def confusion_csv_text(report: EvalReport) -> str:
    lines = ["true\\pred," + ",".join(report.classes)]
    for name, row in zip(report.classes, report.confusion):
        lines.append(name + "," + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"


def _heatmap(ax, report):
    mat = np.asarray(report.confusion, dtype=np.float64)
    ax.imshow(mat, cmap="viridis")
    ax.set_xticks(range(len(report.classes)), report.classes, rotation=45)
    ax.set_yticks(range(len(report.classes)), report.classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(mat.shape[0]):
        for j in range(mat.shape[1]):
            ax.text(j, i, str(int(mat[i, j])), ha="center", va="center",
                    color="white", fontsize=8)


def render_plots(report: EvalReport, out_dir: str, histories=None) -> list:
    """Write the confusion heatmap and, with histories, lr/loss curves.

    histories is an optional list of per-fold TrainHistory objects.
    Returns the written paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []

    fig, ax = plt.subplots(figsize=(6.5, 5.5))
    _heatmap(ax, report)
    ax.set_title(f"pooled confusion ({report.n_rows} rows)")
    fig.tight_layout()
    path = os.path.join(out_dir, "confusion_heatmap.png")
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    if histories:
        fig, ax = plt.subplots(figsize=(7, 4))
        for fold, hist in enumerate(histories):
            ax.plot(hist.lr_trace(), lw=1, label=f"fold {fold}")
        ax.set_xlabel("step")
        ax.set_ylabel("learning rate")
        ax.set_title("cosine schedule per stage")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, "lr_curve.png")
        fig.savefig(path)
        plt.close(fig)
        written.append(path)

        fig, ax = plt.subplots(figsize=(7, 4))
        for fold, hist in enumerate(histories):
            train = [e[2] for e in hist.epochs]
            val = [e[3] for e in hist.epochs]
            ax.plot(train, lw=1, ls="--", label=f"fold {fold} train")
            ax.plot(val, lw=1, label=f"fold {fold} val")
        ax.set_xlabel("epoch")
        ax.set_ylabel("KL")
        ax.set_title("training and validation loss")
        ax.legend(fontsize=6, ncols=2)
        fig.tight_layout()
        path = os.path.join(out_dir, "loss_curves.png")
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def emit_report(report: EvalReport, out_dir: str, histories=None) -> dict:
    """Write report JSON, confusion CSV, and plots; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "report": os.path.join(out_dir, "report.json"),
        "confusion": os.path.join(out_dir, "confusion.csv"),
    }
    save_report(report, paths["report"])
    _atomic_write_text(paths["confusion"], confusion_csv_text(report))
    for p in render_plots(report, out_dir, histories):
        paths[os.path.splitext(os.path.basename(p))[0]] = p
    return paths
