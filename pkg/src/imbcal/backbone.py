"""Linear softmax classifier over fixed features, grown state by state.

Only the classification layer is trainable; features come from the
dataset as-is. Training is plain mini-batch SGD on cross-entropy with a
plateau learning-rate schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .dataset import TRAIN
from .errors import ParameterError

# mean-epoch-loss improvement below this counts as a plateau epoch
PLATEAU_TOL = 1e-4


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray  # (num_classes, dim)
    biases: np.ndarray  # (num_classes,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ParameterError("weights must be (N, d) with matching biases")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ParameterError("model parameters must be finite")

    @property
    def num_classes(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    def to_json(self):
        return {
            "dim": self.dim,
            "num_classes": self.num_classes,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
        }

    @staticmethod
    def from_json(obj):
        return LinearModel(np.array(obj["weights"], dtype=np.float64),
                           np.array(obj["biases"], dtype=np.float64))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 25
    initial_lr: float = 0.1
    plateau_patience: int = 5
    lr_decay: float = 0.1
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if not 0 < self.lr_decay < 1:
            raise ParameterError("lr_decay must be in (0, 1)")
        if self.initial_lr <= 0 or self.batch_size < 1 or self.plateau_patience < 1:
            raise ParameterError("invalid training configuration")


def extend_model(prev, new_class_count, dim, seed):
    """Append rows for new classes; previous rows are copied verbatim.

    New rows are zero-mean Gaussian with stddev 1/sqrt(dim); new biases
    are zero.
    """
    if new_class_count < 1:
        raise ParameterError("new_class_count must be >= 1")
    if prev is not None and prev.dim != dim:
        raise ParameterError(f"dim mismatch: model has {prev.dim}, got {dim}")
    generator = rng.op_rng(seed, rng.INIT)
    new_rows = generator.normal(size=(new_class_count, dim)) / np.sqrt(dim)
    new_biases = np.zeros(new_class_count)
    if prev is None:
        return LinearModel(new_rows, new_biases)
    return LinearModel(
        np.vstack([prev.weights, new_rows]), np.concatenate([prev.biases, new_biases])
    )


def scores(model, features):
    """Raw (pre-softmax) scores W f + b, one row per sample."""
    features = np.asarray(features, dtype=np.float64)
    single = features.ndim == 1
    if single:
        features = features[None, :]
    if features.shape[1] != model.dim:
        raise ParameterError(
            f"feature dim {features.shape[1]} does not match model dim {model.dim}"
        )
    out = features @ model.weights.T + model.biases
    return out[0] if single else out


def softmax(score_matrix):
    """Row-wise softmax with max-subtraction for numerical stability."""
    s = np.asarray(score_matrix, dtype=np.float64)
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _mean_loss(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(logz - shifted[np.arange(len(labels)), labels]))


def train(model, table, config):
    """Mini-batch SGD on softmax cross-entropy over train-split records.

    The learning rate is multiplied by ``lr_decay`` whenever the mean
    epoch loss fails to improve by at least PLATEAU_TOL for
    ``plateau_patience`` consecutive epochs. Deterministic given the
    config seed.
    """
    part = table.only(split=TRAIN)
    if len(part) == 0:
        raise ParameterError("no train-split records to train on")
    if part.labels.max() >= model.num_classes:
        raise ParameterError("table contains labels beyond the model's classes")
    if part.dim != model.dim:
        raise ParameterError("feature dimension does not match the model")

    X, y = part.features, part.labels
    n = len(y)
    W = model.weights.copy()
    b = model.biases.copy()
    generator = rng.op_rng(config.seed, rng.SHUFFLE)

    lr = config.initial_lr
    best = np.inf
    stall = 0
    for _ in range(config.epochs):
        perm = generator.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            Xb, yb = X[idx], y[idx]
            logits = Xb @ W.T + b
            probs = softmax(logits)
            epoch_loss += _mean_loss(logits, yb) * len(idx)
            grad = probs
            grad[np.arange(len(idx)), yb] -= 1.0
            grad /= len(idx)
            W -= lr * grad.T @ Xb
            b -= lr * grad.sum(axis=0)
        epoch_loss /= n
        if best - epoch_loss >= PLATEAU_TOL:
            best = epoch_loss
            stall = 0
        else:
            stall += 1
            if stall >= config.plateau_patience:
                lr *= config.lr_decay
                stall = 0
    return LinearModel(W, b)
