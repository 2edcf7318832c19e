"""Finite-difference verification of analytic gradients.

Runs the full pipeline (forward, softmax, KL against a fixed target) in
64-bit and compares every parameter gradient to a central difference.
Dropout must be disabled in the checked graph; batch statistics stay on
so the batchnorm training path is what gets verified.
"""

from __future__ import annotations

import numpy as np

from .losses import kl_grad_logits, kl_loss, softmax


def _loss(model, batch, targets, weights):
    logits = model.forward(batch, train=True)
    return kl_loss(targets, softmax(logits), weights)


def relative_error(a: float, n: float) -> float:
    denom = abs(a) + abs(n)
    if denom == 0.0:
        return 0.0
    return abs(a - n) / max(denom, 1e-8)


def grad_check(
    model,
    batch,
    targets: np.ndarray,
    weights=None,
    eps: float = 1e-3,
    max_evals: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and numeric parameter gradients.

    Checks every parameter element unless max_evals caps the count, in
    which case a seeded sample is drawn.  The model must be built in
    float64 with dropout rate 0.
    """
    if model.dtype != np.float64:
        raise ValueError("gradient checking requires a float64 model")
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))

    model.zero_grad()
    logits = model.forward(batch, train=True)
    _, dlogits = kl_grad_logits(targets, logits, weights)
    model.backward(dlogits)
    analytic = {name: p.grad.copy() for name, p in model.params().items()}

    coords = []
    for name, p in model.params().items():
        for flat in range(p.size):
            coords.append((name, flat))
    if max_evals is not None and len(coords) > max_evals:
        if rng is None:
            rng = np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_evals, replace=False)
        coords = [coords[i] for i in picks]

    params = model.params()
    worst = 0.0
    for name, flat in coords:
        data = params[name].data.reshape(-1)
        saved = data[flat]
        data[flat] = saved + eps
        up = _loss(model, batch, targets, weights)
        data[flat] = saved - eps
        down = _loss(model, batch, targets, weights)
        data[flat] = saved
        numeric = (up - down) / (2.0 * eps)
        a = float(analytic[name].reshape(-1)[flat])
        worst = max(worst, relative_error(a, numeric))
    return worst
