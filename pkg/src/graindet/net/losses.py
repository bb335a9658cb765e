"""Loss functions with analytic gradients."""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, numerically stable; works on 1-D or 2-D input."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, class_index) -> tuple:
    """Log loss of the softmax distribution against an integer class.

    For 1-D logits returns ``(loss, grad)`` with scalar loss; for
    ``(N, K)`` logits and an ``(N,)`` index array returns per-row losses
    ``(N,)`` and grads ``(N, K)``.
    """
    logits = np.asarray(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    if logits.ndim == 1:
        idx = int(class_index)
        loss = -log_probs[idx]
        grad = probs.copy()
        grad[idx] -= 1.0
        return float(loss), grad
    idx = np.asarray(class_index, dtype=np.int64)
    rows = np.arange(logits.shape[0])
    losses = -log_probs[rows, idx]
    grads = probs.copy()
    grads[rows, idx] -= 1.0
    return losses, grads


def smooth_l1(pred: np.ndarray, target: np.ndarray) -> tuple:
    """Smooth L1 (Huber at delta=1) summed over all elements.

    Quadratic for |d| < 1, linear outside, with a continuous first
    derivative. Returns ``(loss, grad_wrt_pred)``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    d = pred - target
    ad = np.abs(d)
    quad = ad < 1.0
    loss = np.where(quad, 0.5 * d * d, ad - 0.5).sum()
    grad = np.where(quad, d, np.sign(d))
    return float(loss), grad
