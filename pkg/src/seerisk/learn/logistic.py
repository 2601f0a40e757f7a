"""Multinomial logistic regression trained by full-batch gradient descent."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..domain import CLASSES
from ..errors import ConfigError, DataError, FitError
from .tree import _as_matrix, label_index


@dataclass(frozen=True)
class LogisticParams:
    learning_rate: float = 0.1
    l2: float = 1e-3
    epochs: int = 500

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")

    def to_json(self) -> dict:
        return {"learning_rate": self.learning_rate, "l2": self.l2, "epochs": self.epochs}

    @classmethod
    def from_json(cls, obj: Mapping) -> "LogisticParams":
        unknown = set(obj) - {"learning_rate", "l2", "epochs"}
        if unknown:
            raise ConfigError(f"unknown logistic parameters: {sorted(unknown)}")
        return cls(**obj)


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float):
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient.

    ``W`` is (classes, features), ``Y`` one-hot (rows, classes).
    """
    n = X.shape[0]
    Z = X @ W.T + b
    Zs = Z - Z.max(axis=1, keepdims=True)
    logp = Zs - np.log(np.exp(Zs).sum(axis=1, keepdims=True))
    loss = -np.sum(Y * logp) / n + 0.5 * l2 * np.sum(W * W)
    G = (np.exp(logp) - Y) / n
    return loss, G.T @ X + l2 * W, G.sum(axis=0)


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: np.ndarray
    params: LogisticParams
    classes: tuple[int, ...] = CLASSES
    loss_history: list[float] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"model expects {self.n_features} columns, got shape {X.shape}")
        return softmax(X @ self.weights.T + self.bias)

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes)[self.predict_proba(X).argmax(axis=1)]


def fit_logistic(X, y, params: LogisticParams = LogisticParams(),
                 classes: Sequence[int] = CLASSES) -> LogisticModel:
    """Gradient descent from zero weights for ``params.epochs`` steps."""
    X = _as_matrix(X)
    yi = label_index(y, classes)
    if X.shape[0] == 0:
        raise FitError("cannot fit logistic regression on zero rows")
    Y = np.eye(len(classes))[yi]
    W = np.zeros((len(classes), X.shape[1]))
    b = np.zeros(len(classes))
    history = []
    # divergence is reported below as a FitError, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(params.epochs):
            loss, gW, gb = loss_and_grad(W, b, X, Y, params.l2)
            if not np.isfinite(loss):
                raise FitError(f"loss became non-finite at epoch {epoch}; lower the learning rate")
            history.append(float(loss))
            W -= params.learning_rate * gW
            b -= params.learning_rate * gb
        final = loss_and_grad(W, b, X, Y, params.l2)[0]
    if not np.isfinite(final):
        raise FitError(f"loss became non-finite at epoch {params.epochs}; lower the learning rate")
    history.append(float(final))
    return LogisticModel(W, b, params, tuple(classes), history)
