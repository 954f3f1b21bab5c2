"""Numerically stable reductions on plain float64 arrays."""
from __future__ import annotations

import numpy as np


class NumericsError(ValueError):
    """Raised when an operation meets non-finite or malformed input."""


def check_finite(x: np.ndarray, what: str = "input") -> None:
    # a finite sum implies finite entries; only scan elementwise when it is not
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(np.add.reduce(np.ravel(x))):
            return
    if not np.all(np.isfinite(x)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(x))[0])
        raise NumericsError(f"non-finite {what} at index {bad}")


def _check_axis(x: np.ndarray, axis: int) -> int:
    if x.ndim == 0 or not -x.ndim <= axis < x.ndim:
        raise NumericsError(f"axis {axis} invalid for shape {x.shape}")
    return axis % x.ndim


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis`` using max-subtraction.

    Raises NumericsError naming the first non-finite entry.
    """
    x = np.asarray(logits, dtype=np.float64)
    axis = _check_axis(x, axis)
    check_finite(x, "logits")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_sum_exp(logits, axis: int = -1, keepdims: bool = False) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    axis = _check_axis(x, axis)
    if x.shape[axis] == 0:
        raise NumericsError("log_sum_exp over an empty axis")
    check_finite(x, "logits")
    m = x.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(x - m).sum(axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def log_softmax(logits, axis: int = -1) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    return x - log_sum_exp(x, axis=axis, keepdims=True)


def entropy(probs, axis: int = -1) -> np.ndarray:
    """Shannon entropy in nats with 0 log 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=axis)
