from dataclasses import dataclass

import numpy as np

from ..errors import PreconditionError


@dataclass
class LossResult:
    losses: np.ndarray   # per-example loss
    mean: float
    probs: np.ndarray
    entropy: np.ndarray  # per-example Shannon entropy of probs
    grad: np.ndarray     # d(mean loss)/dz


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _soft_ce(z, y):
    logp = log_softmax(z)
    probs = np.exp(logp)
    losses = -(y * logp).sum(axis=1)
    entropy = -(probs * logp).sum(axis=1)
    m = z.shape[0]
    return LossResult(losses, float(losses.mean()), probs, entropy, (probs - y) / m)


def _check_logits(z, y):
    if z.ndim != 2 or z.shape != y.shape:
        raise PreconditionError(f"logits {z.shape} and labels {y.shape} must be matching (M, c) arrays")
    if z.shape[1] < 2:
        raise PreconditionError("need at least 2 classes")


def cross_entropy(z, y):
    """Cross-entropy ``-y.(z - logsumexp(z))`` for one-hot rows ``y``."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_logits(z, y)
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise PreconditionError("cross_entropy expects one-hot label rows; use soft_cross_entropy")
    return _soft_ce(z, y)


def soft_cross_entropy(z, y_soft, tol=1e-9):
    """Cross-entropy against label distributions (Mixup targets)."""
    z = np.asarray(z, dtype=np.float64)
    y_soft = np.asarray(y_soft, dtype=np.float64)
    _check_logits(z, y_soft)
    if np.any(y_soft < 0) or np.any(np.abs(y_soft.sum(axis=1) - 1.0) > tol):
        raise PreconditionError("soft labels must be nonnegative rows summing to 1")
    return _soft_ce(z, y_soft)
