"""Softmax head and the KL-divergence objective over soft vote targets."""

from __future__ import annotations

import numpy as np

Q_FLOOR = 1e-15


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for overflow safety."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-row sum of p * log(p / q) with 0 log 0 treated as 0.

    q is floored at 1e-15 so rows with vanishing predicted mass stay
    finite.
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = np.maximum(np.atleast_2d(np.asarray(q, dtype=np.float64)), Q_FLOOR)
    active = p > 0
    terms = np.zeros_like(p)
    terms[active] = p[active] * (np.log(p[active]) - np.log(q[active]))
    return terms.sum(axis=-1)


def kl_loss(p: np.ndarray, q: np.ndarray, weights=None) -> float:
    """Weighted mean KL over a batch (plain mean when weights is None)."""
    rows = kl_divergence(p, q)
    if weights is None:
        return float(rows.mean())
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != rows.shape:
        raise ValueError(f"weights shape {w.shape} != batch shape {rows.shape}")
    total = w.sum()
    if total <= 0:
        raise ValueError("sum of sample weights must be positive")
    return float((w * rows).sum() / total)


def kl_grad_logits(p: np.ndarray, logits: np.ndarray, weights=None):
    """Loss value and its gradient in the logits.

    For the weighted-mean reduction the gradient of row i is
    w_i * (softmax(logits)_i - p_i) / sum(w).
    """
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    q = softmax(np.atleast_2d(logits))
    loss = kl_loss(p, q, weights)
    if weights is None:
        w = np.ones(p.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
    grad = (q - p) * (w / w.sum())[:, None]
    return loss, grad
