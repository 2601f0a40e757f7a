"""CART classification trees with Gini impurity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..domain import CLASSES
from ..errors import ConfigError, DataError, FitError
from . import _kernels

SPLIT_TOL = 1e-9
UNLIMITED_DEPTH = 2 ** 31 - 1


def gini(class_counts) -> float:
    """``1 - sum(p_i^2)`` for a vector of class counts."""
    c = np.asarray(class_counts, dtype=float)
    if (c < 0).any():
        raise DataError("class counts must be non-negative")
    n = c.sum()
    if n == 0:
        raise DataError("gini impurity is undefined for an empty node")
    p = c / n
    return float(1.0 - np.dot(p, p))


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    # int, "sqrt", or None for every column
    features_per_split: int | str | None = "sqrt"

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise ConfigError(f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.min_samples_leaf > self.min_samples_split:
            raise ConfigError(
                f"min_samples_leaf ({self.min_samples_leaf}) exceeds "
                f"min_samples_split ({self.min_samples_split})")
        f = self.features_per_split
        if isinstance(f, str) and f != "sqrt":
            raise ConfigError(f"features_per_split must be an int, 'sqrt' or null, got {f!r}")
        if isinstance(f, int) and f < 1:
            raise ConfigError(f"features_per_split must be >= 1, got {f}")

    def n_candidates(self, n_features: int) -> int:
        f = self.features_per_split
        if f is None:
            return n_features
        if f == "sqrt":
            return max(1, int(math.isqrt(n_features)))
        return min(int(f), n_features)

    def to_json(self) -> dict:
        return {"max_depth": self.max_depth, "min_samples_split": self.min_samples_split,
                "min_samples_leaf": self.min_samples_leaf,
                "features_per_split": self.features_per_split}

    @classmethod
    def from_json(cls, obj: Mapping) -> "TreeParams":
        unknown = set(obj) - {"max_depth", "min_samples_split", "min_samples_leaf",
                              "features_per_split"}
        if unknown:
            raise ConfigError(f"unknown tree parameters: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class Split:
    column: int
    threshold: float
    gain: float


def label_index(y, classes: Sequence[int] = CLASSES) -> np.ndarray:
    """Map class labels to 0-based indices into ``classes``."""
    y = np.asarray(y)
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.fromiter((lookup[int(v)] for v in y), dtype=np.int64, count=len(y))
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]} not in classes {tuple(classes)}") from None


def presort(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column ascending row order and the matching sorted values, column-major."""
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    values = np.ascontiguousarray(np.take_along_axis(X, order.T, axis=0).T)
    return values, order


def _as_matrix(X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("feature matrix contains missing or non-finite values")
    return X


def best_split(X, y, candidate_columns: Sequence[int], min_samples_leaf: int = 1,
               classes: Sequence[int] | None = None) -> Split | None:
    """Gini-optimal axis-aligned split over ``candidate_columns``.

    Thresholds are midpoints between consecutive distinct values. Ties go to
    the lower column index, then the lower threshold. ``None`` when no split
    has positive gain.
    """
    X = _as_matrix(X)
    y = np.asarray(y)
    if X.shape[0] < 2:
        return None
    if classes is None:
        classes = tuple(sorted({int(v) for v in y}))
    yi = label_index(y, classes)
    w = np.ones(X.shape[0])
    idx = np.arange(X.shape[0], dtype=np.int64)
    tot = np.bincount(yi, minlength=len(classes)).astype(float)
    cols = np.unique(np.asarray(candidate_columns, dtype=np.int64))
    Xs, order = presort(X)
    m = X.shape[0]
    c, t, s, base = _kernels.node_split(
        X, yi, w, idx, 0, m, cols, tot, float(m), float(min_samples_leaf), SPLIT_TOL,
        Xs, order, np.full(m, -1, np.int64), 0, np.empty(m), np.empty(m, np.int64),
        np.zeros(len(classes)))
    if c < 0:
        return None
    return Split(int(c), float(t), float((s - base) / m))


@dataclass
class DecisionTree:
    """Binary tree in preorder arrays. ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray
    importances: np.ndarray
    classes: tuple[int, ...] = CLASSES

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    @property
    def leaf_classes(self) -> np.ndarray:
        """Majority class index per node; ties go to the lower class."""
        return self.counts.argmax(axis=1)

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes)[self.leaf_classes[self.apply(X)]]

    def to_json(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "counts": self.counts.astype(np.int64).tolist(),
                "importances": self.importances.tolist()}

    @classmethod
    def from_json(cls, obj: Mapping, n_features: int, classes=CLASSES) -> "DecisionTree":
        imp = obj.get("importances")
        return cls(np.asarray(obj["feature"], dtype=np.int64),
                   np.asarray(obj["threshold"], dtype=np.float64),
                   np.asarray(obj["left"], dtype=np.int64), np.asarray(obj["right"], dtype=np.int64),
                   np.asarray(obj["counts"], dtype=np.float64),
                   np.zeros(n_features) if imp is None else np.asarray(imp, dtype=np.float64),
                   tuple(classes))


def fit_tree(X, y, params: TreeParams = TreeParams(), rng: np.random.Generator | int | None = 0,
             sample_weight=None, classes: Sequence[int] = CLASSES, presorted=None) -> DecisionTree:
    """Grow a CART tree greedily.

    Growth stops at ``max_depth``, below ``min_samples_split``, at pure nodes,
    or when no candidate split has positive gain. ``sample_weight`` holds
    integer multiplicities (a bootstrap draw); zero-weight rows are ignored.
    """
    X = _as_matrix(X)
    n, d = X.shape
    if n == 0:
        raise FitError("cannot fit a tree on zero rows")
    if len(y) != n:
        raise DataError(f"X has {n} rows but y has {len(y)}")
    rng = np.random.default_rng(rng)
    yi = label_index(y, classes)
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    idx = np.flatnonzero(w > 0).astype(np.int64)
    if len(idx) == 0:
        raise FitError("sample weights select no rows")
    m = params.n_candidates(d)
    U = rng.random((2 * len(idx) + 1, m))
    Xs, order = presorted if presorted is not None else presort(X)
    depth = UNLIMITED_DEPTH if params.max_depth is None else params.max_depth
    feat, thr, left, right, counts, imp = _kernels.grow_tree(
        X, yi, w, idx, len(classes), m, U, depth, float(params.min_samples_split),
        float(params.min_samples_leaf), SPLIT_TOL, Xs, order)
    return DecisionTree(feat, thr, left, right, counts, imp, tuple(classes))
