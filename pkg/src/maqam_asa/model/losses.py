"""Detection and type-classification losses.

Detection uses weighted binary cross-entropy (positive class up-weighted for
the clean/error imbalance). Type classification uses focal loss with
per-class alpha weights, computed only on windows whose ground truth says an
error is present.
"""

from __future__ import annotations

import numpy as np

PROB_CLAMP = 1e-7


def _clamp(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def weighted_bce(probs, targets, pos_weight: float = 1.0) -> float:
    """Mean over the batch of -[w*y*log(p) + (1-y)*log(1-p)]."""
    if pos_weight <= 0:
        raise ValueError("pos_weight must be positive")
    p = _clamp(np.asarray(probs, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64)
    losses = -(pos_weight * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(losses.mean())


def weighted_bce_grad(probs, targets, pos_weight: float = 1.0) -> np.ndarray:
    """d(loss)/d(probs); zero where the clamp is active."""
    probs = np.asarray(probs)
    p = _clamp(probs.astype(np.float64))
    y = np.asarray(targets, dtype=np.float64)
    grad = -(pos_weight * y / p - (1.0 - y) / (1.0 - p)) / p.size
    grad[(probs < PROB_CLAMP) | (probs > 1.0 - PROB_CLAMP)] = 0.0
    return grad.astype(probs.dtype)


def focal_loss(type_probs, targets, alpha, gamma: float = 2.0, mask=None) -> float:
    """Mean of -alpha[y] * (1 - p_y)^gamma * log(p_y) over selected rows.

    ``mask`` selects the rows that count (true-error windows); with no
    selected rows the loss is exactly 0.
    """
    probs = np.asarray(type_probs, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if mask is None:
        mask = np.ones(len(y), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return 0.0
    rows = np.flatnonzero(mask)
    p_y = _clamp(probs[rows, y[rows]])
    losses = -alpha[y[rows]] * (1.0 - p_y) ** gamma * np.log(p_y)
    return float(losses.mean())


def focal_loss_grad(type_probs, targets, alpha, gamma: float = 2.0, mask=None) -> np.ndarray:
    """d(loss)/d(type_probs): nonzero only at selected rows' target column."""
    type_probs = np.asarray(type_probs)
    probs = type_probs.astype(np.float64)
    y = np.asarray(targets, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if mask is None:
        mask = np.ones(len(y), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    grad = np.zeros_like(probs)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return grad.astype(type_probs.dtype)
    raw = probs[rows, y[rows]]
    p = _clamp(raw)
    one_m = 1.0 - p
    if gamma == 0.0:
        d = -alpha[y[rows]] / p
    else:
        d = alpha[y[rows]] * (gamma * one_m ** (gamma - 1.0) * np.log(p) - one_m ** gamma / p)
    d = d / rows.size
    d[(raw < PROB_CLAMP) | (raw > 1.0 - PROB_CLAMP)] = 0.0
    grad[rows, y[rows]] = d
    return grad.astype(type_probs.dtype)
