"""Attack objectives with analytic gradients at the logits.

Both losses accept a single logit vector ``(K,)`` with an integer label, or a
batch ``(B, K)`` with labels ``(B,)``. For a batch the loss is per sample and
the gradient row ``b`` is the gradient of sample ``b``'s loss.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class LossValue:
    loss: float | np.ndarray
    grad: np.ndarray


def _prepare(logits, y):
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    y = np.atleast_1d(np.asarray(y))
    k = z.shape[1]
    if y.shape != (z.shape[0],) or not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integers, one per logit row")
    if np.any((y < 0) | (y >= k)):
        raise ValueError(f"label out of range for {k} classes")
    return z, y, single


def _finish(loss, grad, single, dtype):
    grad = grad.astype(dtype, copy=False)
    if single:
        return LossValue(float(loss[0]), grad[0])
    return LossValue(loss, grad)


def ce_loss(logits, y):
    """Softmax cross-entropy."""
    z, y, single = _prepare(logits, y)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = log_norm - shifted[rows, y]
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, y] -= 1.0
    return _finish(loss, grad, single, np.asarray(logits).dtype)


def cw_loss(logits, y):
    """Margin loss ``max(f_y - max_{i != y} f_i, 0)``; zero once misclassified."""
    z, y, single = _prepare(logits, y)
    if z.shape[1] < 2:
        raise ValueError("margin loss needs at least two classes")
    rows = np.arange(z.shape[0])
    others = z.copy()
    others[rows, y] = -np.inf
    best_other = np.argmax(others, axis=1)
    margin = z[rows, y] - others[rows, best_other]
    loss = np.maximum(margin, 0.0)
    grad = np.zeros_like(z)
    active = margin > 0
    grad[rows[active], y[active]] = 1.0
    grad[rows[active], best_other[active]] = -1.0
    return _finish(loss, grad, single, np.asarray(logits).dtype)


LOSSES = {"ce": ce_loss, "cw": cw_loss}


def get_loss(kind):
    try:
        return LOSSES[kind]
    except KeyError:
        raise ValueError(f"unknown loss kind {kind!r}; choose from {sorted(LOSSES)}") from None
