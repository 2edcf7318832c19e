"""Two-stage vote-weighted training with Adam and cosine annealing.

Stage 1 fits only high-confidence rows (>= 10 votes) at weight 1; stage
2 revisits the full dataset with per-row weights that decay from 1
toward votes/10 on an epoch ramp.  The single-stage ablation skips the
pretraining and runs stage 2 alone for the combined epoch budget,
isolating what the high-confidence warm start buys.  Every stage
restarts both the cosine schedule and the optimizer moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig
from .dataset import FoldPlan, stage2_ramp
from .errors import PipelineError
from .features import TrainingData, augmented_batch, centered_batch
from .nn import save_checkpoint
from .nn.losses import kl_divergence, kl_grad_logits, softmax

HIGH_CONFIDENCE_VOTES = 10

TWO_STAGE = "two-stage"
SINGLE_STAGE = "single-stage"
STRATEGIES = (TWO_STAGE, SINGLE_STAGE)


@dataclass(frozen=True)
class TrainConfig:
    """Optimization constants; defaults follow the reference recipe."""

    lr0: float = 0.0012
    lr_min: float = 0.0
    batch_size: int = 32
    stage1_epochs: int = 5
    stage2_epochs: int = 15
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.lr_min < 0 or self.lr_min > self.lr0:
            raise ValueError(f"lr_min must be in [0, lr0], got {self.lr_min}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.stage1_epochs < 1 or self.stage2_epochs < 1:
            raise ValueError("epoch counts must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")


@dataclass
class TrainHistory:
    """Per-step learning rates and per-epoch losses, tagged by stage."""

    steps: list = field(default_factory=list)   # (stage, epoch, step, lr)
    epochs: list = field(default_factory=list)  # (stage, epoch, train, val)

    def lr_trace(self, stage: str | None = None):
        return [s[3] for s in self.steps if stage is None or s[0] == stage]

    def val_trace(self, stage: str | None = None):
        return [e[3] for e in self.epochs if stage is None or e[0] == stage]


def cosine_lr(step: int, total_steps: int, lr0: float = 0.0012,
              lr_min: float = 0.0) -> float:
    """Half-cosine decay from lr0 at step 0 to lr_min at total_steps."""
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_min + (lr0 - lr_min) * 0.5 * (1.0 + math.cos(
        math.pi * step / total_steps))


class AdamState:
    """First/second moment buffers with bias-corrected updates."""

    def __init__(self, params: dict):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, params: dict, lr: float, beta1: float = 0.9,
             beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.t += 1
        for name, p in params.items():
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(
                    f"non-finite gradient in parameter {name}")
            m, v = self.m[name], self.v[name]
            m += (1.0 - beta1) * (g - m)
            v += (1.0 - beta2) * (g * g - v)
            mhat = m / (1.0 - beta1 ** self.t)
            vhat = v / (1.0 - beta2 ** self.t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


def clip_grad_norm(params: dict, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for p in params.values():
            p.grad *= scale
    return norm


def epoch_weights(votes: np.ndarray, stage: int, epoch: int,
                  n_epochs: int) -> np.ndarray:
    """Vectorized per-row loss weights for one epoch of one stage."""
    votes = np.asarray(votes, dtype=np.float64)
    if stage == 1:
        return np.ones(votes.shape[0])
    if stage != 2:
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    confidence = np.minimum(1.0, votes / 10.0)
    return np.maximum(stage2_ramp(epoch, n_epochs), confidence)


def predict(model, data: TrainingData, idx, batch_size: int = 64) -> np.ndarray:
    """Eval-mode class distributions for the given rows, centered crops."""
    idx = np.asarray(idx)
    out = np.empty((idx.size, data.targets.shape[1]), dtype=np.float64)
    for lo in range(0, idx.size, batch_size):
        chunk = idx[lo:lo + batch_size]
        logits = model.forward(centered_batch(data, chunk), train=False)
        out[lo:lo + chunk.size] = softmax(logits)
    return out


def _validation_kl(model, data: TrainingData, val_idx) -> float:
    preds = predict(model, data, val_idx)
    return float(np.mean(kl_divergence(data.targets[np.asarray(val_idx)],
                                       preds)))


def train_stage(
    model,
    data: TrainingData,
    train_idx,
    val_idx,
    stage: int,
    epochs: int,
    cfg: TrainConfig,
    fold: int = 0,
    history: TrainHistory | None = None,
    stage_label: str | None = None,
    uniform_weights: bool = False,
) -> TrainHistory:
    """Run one training stage in place; returns the (shared) history.

    Stage 1 keeps only high-confidence rows of train_idx and weights
    them 1.  Stage 2 trains on all of train_idx with vote-confidence
    weights unless uniform_weights is set.  Validation KL is logged per
    epoch on val_idx without augmentation.  The cosine schedule and the
    optimizer state are local to the stage.
    """
    history = history if history is not None else TrainHistory()
    label = stage_label or f"stage{stage}"
    train_idx = np.asarray(train_idx)
    if stage == 1:
        keep = data.votes[train_idx] >= HIGH_CONFIDENCE_VOTES
        train_idx = train_idx[keep]
    if train_idx.size == 0:
        raise PipelineError(f"{label}: empty training split")

    params = model.params()
    adam = AdamState(params)
    steps_per_epoch = math.ceil(train_idx.size / cfg.batch_size)
    total_steps = epochs * steps_per_epoch
    # Denominator total_steps - 1 makes the trace span lr0 down to
    # lr_min inclusive.
    denom = max(total_steps - 1, 1)
    step = 0
    # Stage tags keep the two-stage and single-stage random streams
    # disjoint even where epoch indices coincide.
    stream_tag = {"stage1": 1, "stage2": 2, "single": 3}.get(label, 9)

    for epoch in range(epochs):
        rng = np.random.default_rng(
            [cfg.seed, fold, stream_tag, epoch])
        order = rng.permutation(train_idx.size)
        if uniform_weights:
            weights = np.ones(train_idx.size)
        else:
            weights = epoch_weights(data.votes[train_idx], stage, epoch,
                                    epochs)
        loss_sum = 0.0
        weight_sum = 0.0
        for b in range(steps_per_epoch):
            rows = train_idx[order[b * cfg.batch_size:
                                   (b + 1) * cfg.batch_size]]
            w_rows = weights[order[b * cfg.batch_size:
                                   (b + 1) * cfg.batch_size]]
            inputs, targets, w = augmented_batch(data, rows, w_rows,
                                                 cfg.augment, rng)
            model.zero_grad()
            logits = model.forward(inputs, train=True, rng=rng)
            loss, dlogits = kl_grad_logits(targets, logits, w)
            if not math.isfinite(loss):
                raise PipelineError(
                    f"{label}: non-finite loss at epoch {epoch} step {b}; "
                    f"history retained through the previous step")
            model.backward(dlogits)
            clip_grad_norm(params, cfg.clip_norm)
            lr = cosine_lr(min(step, denom), denom, cfg.lr0, cfg.lr_min)
            adam.step(params, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            history.steps.append((label, epoch, step, lr))
            loss_sum += loss * float(np.sum(w))
            weight_sum += float(np.sum(w))
            step += 1
        train_loss = loss_sum / weight_sum
        val_kl = _validation_kl(model, data, val_idx)
        history.epochs.append((label, epoch, train_loss, val_kl))
    return history


@dataclass
class FoldOutcome:
    fold: int
    score: float
    preds: np.ndarray
    targets: np.ndarray
    record_idx: np.ndarray
    history: TrainHistory


@dataclass
class CvResult:
    strategy: str
    outcomes: list

    @property
    def fold_scores(self):
        return [o.score for o in self.outcomes]

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.fold_scores))


def model_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def run_cv(
    build_model,
    data: TrainingData,
    plan: FoldPlan,
    cfg: TrainConfig,
    strategy: str = TWO_STAGE,
    run_dir=None,
) -> CvResult:
    """Cross-validated training: fresh model per fold, scored on its fold.

    build_model(seed) must return an untrained model.  With two-stage,
    each fold runs stage 1 on high-confidence rows then stage 2 on all
    rows; single-stage runs stage 2 alone for the combined epoch
    budget.  Checkpoints per stage land in run_dir when given.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    outcomes = []
    for fold in range(plan.k):
        model = build_model(model_seed(cfg.seed, fold))
        tr = plan.train_indices(fold)
        va = plan.fold_indices(fold)
        history = TrainHistory()
        if strategy == TWO_STAGE:
            train_stage(model, data, tr, va, stage=1,
                        epochs=cfg.stage1_epochs, cfg=cfg, fold=fold,
                        history=history)
            if run_dir is not None:
                save_checkpoint(model, f"{run_dir}/fold{fold}_stage1")
            train_stage(model, data, tr, va, stage=2,
                        epochs=cfg.stage2_epochs, cfg=cfg, fold=fold,
                        history=history)
            if run_dir is not None:
                save_checkpoint(model, f"{run_dir}/fold{fold}_stage2")
        else:
            train_stage(model, data, tr, va, stage=2,
                        epochs=cfg.stage1_epochs + cfg.stage2_epochs,
                        cfg=cfg, fold=fold, history=history,
                        stage_label="single")
            if run_dir is not None:
                save_checkpoint(model, f"{run_dir}/fold{fold}_single")
        preds = predict(model, data, va)
        targets = data.targets[va]
        score = float(np.mean(kl_divergence(targets, preds)))
        outcomes.append(FoldOutcome(fold=fold, score=score, preds=preds,
                                    targets=targets, record_idx=va,
                                    history=history))
    return CvResult(strategy=strategy, outcomes=outcomes)
