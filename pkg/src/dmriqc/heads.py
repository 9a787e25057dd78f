"""Trainable classification head: 256-unit FC + dropout + softmax.

Plain numpy implementation trained with RMSprop on cross-entropy; small
enough that a framework would be overkill, and fully deterministic given
a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError


@dataclass(frozen=True)
class HeadConfig:
    hidden_units: int = 256
    dropout_rate: float = 0.5
    output_classes: int = 2

    def __post_init__(self):
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 2e-4
    optimizer: str = "rmsprop"
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-7
    loss: str = "cross_entropy"
    batch_size: int = 32
    class_balance: str = "weighted"  # none | weighted | oversample
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.class_balance not in ("none", "weighted", "oversample"):
            raise ValueError(f"unknown class_balance {self.class_balance!r}")


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxHead:
    """Two-layer head (linear-ReLU-dropout-linear-softmax) with RMSprop."""

    def __init__(self, input_dim: int, config: HeadConfig = HeadConfig(), seed: int = 0):
        self.config = config
        self.input_dim = input_dim
        rng = np.random.default_rng(seed)
        h, k = config.hidden_units, config.output_classes
        self.w1 = rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, h))
        self.b1 = np.zeros(h)
        self.w2 = rng.normal(0.0, np.sqrt(1.0 / h), size=(h, k))
        self.b2 = np.zeros(k)
        self.loss_history: list[float] = []

    def _params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        hidden = np.maximum(X @ self.w1 + self.b1, 0.0)
        return _softmax(hidden @ self.w2 + self.b2)

    def fit(self, X: np.ndarray, y: np.ndarray, train: TrainConfig = TrainConfig()) -> "SoftmaxHead":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=int)
        n = len(X)
        if n != len(y):
            raise TrainingError(f"{n} rows vs {len(y)} labels")

        sample_w = np.ones(n)
        if train.class_balance == "weighted":
            counts = np.bincount(y, minlength=self.config.output_classes).astype(float)
            weights = np.where(counts > 0, n / (np.count_nonzero(counts) * np.maximum(counts, 1)), 0.0)
            sample_w = weights[y]

        rng = np.random.default_rng(train.seed)
        cache = [np.zeros_like(p) for p in self._params()]
        rho, eps, lr = train.rmsprop_decay, train.rmsprop_epsilon, train.learning_rate
        drop = self.config.dropout_rate

        self.loss_history = []
        for epoch in range(train.epochs):
            order = rng.permutation(n)
            epoch_loss, epoch_weight = 0.0, 0.0
            for start in range(0, n, train.batch_size):
                idx = order[start : start + train.batch_size]
                xb, yb, wb = X[idx], y[idx], sample_w[idx]

                pre = xb @ self.w1 + self.b1
                hidden = np.maximum(pre, 0.0)
                if drop > 0.0:
                    mask = (rng.random(hidden.shape) >= drop) / (1.0 - drop)
                    hidden = hidden * mask
                proba = _softmax(hidden @ self.w2 + self.b2)

                wsum = wb.sum()
                loss = float(-(wb * np.log(np.maximum(proba[np.arange(len(yb)), yb], 1e-12))).sum())
                epoch_loss += loss
                epoch_weight += wsum

                dlogits = proba.copy()
                dlogits[np.arange(len(yb)), yb] -= 1.0
                dlogits *= (wb / max(wsum, 1e-12))[:, None]
                dw2 = hidden.T @ dlogits
                db2 = dlogits.sum(axis=0)
                dhid = dlogits @ self.w2.T
                if drop > 0.0:
                    dhid = dhid * mask
                dhid[pre <= 0.0] = 0.0
                dw1 = xb.T @ dhid
                db1 = dhid.sum(axis=0)

                for p, g, c in zip(self._params(), [dw1, db1, dw2, db2], cache):
                    c *= rho
                    c += (1.0 - rho) * g * g
                    p -= lr * g / (np.sqrt(c) + eps)

            mean_loss = epoch_loss / max(epoch_weight, 1e-12)
            if not np.isfinite(mean_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch + 1}/{train.epochs}; "
                    f"lr={lr}, batch={train.batch_size}, input_dim={self.input_dim}"
                )
            self.loss_history.append(mean_loss)
        return self
