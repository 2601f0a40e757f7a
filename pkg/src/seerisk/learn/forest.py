"""Bootstrap-aggregated random forests with hard majority voting."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..domain import CLASSES
from ..errors import ConfigError, DataError, FitError
from .tree import DecisionTree, TreeParams, _as_matrix, fit_tree, presort


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    tree: TreeParams = field(default_factory=TreeParams)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")

    def to_json(self) -> dict:
        return {"n_trees": self.n_trees, **self.tree.to_json(), "bootstrap": self.bootstrap,
                "seed": self.seed}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ForestParams":
        obj = dict(obj)
        n_trees = int(obj.pop("n_trees", 100))
        bootstrap = bool(obj.pop("bootstrap", True))
        seed = int(obj.pop("seed", 0))
        return cls(n_trees, TreeParams.from_json(obj), bootstrap, seed)


def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for tree ``index``; depends only on (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


@dataclass
class RandomForestModel:
    trees: list[DecisionTree]
    params: ForestParams
    n_features: int
    classes: tuple[int, ...] = CLASSES
    feature_names: list[str] | None = None
    oob_score: float | None = None
    metadata: dict = field(default_factory=dict)

    def vote_counts(self, X) -> np.ndarray:
        """Per-row count of trees voting for each class."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"model expects {self.n_features} columns, got shape {X.shape}")
        votes = np.zeros((X.shape[0], len(self.classes)))
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            votes[rows, tree.leaf_classes[tree.apply(X)]] += 1.0
        return votes

    def predict_proba(self, X) -> np.ndarray:
        """Vote fractions per class (rows sum to 1)."""
        return self.vote_counts(X) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes)[self.vote_counts(X).argmax(axis=1)]

    @property
    def feature_importances(self) -> np.ndarray:
        """Mean over trees of each tree's normalized Gini decrease."""
        out = np.zeros(self.n_features)
        for tree in self.trees:
            total = tree.importances.sum()
            if total > 0:
                out += tree.importances / total
        return out / len(self.trees)


def predict(model, x) -> tuple[int, np.ndarray]:
    """Class and per-class vote fractions for a single row.

    The class is the argmax of tree votes; ties go to the lower class.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("predict takes one row; use model.predict_proba for batches")
    frac = model.predict_proba(x[None, :])[0]
    return int(model.classes[int(frac.argmax())]), frac


def _bootstrap_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)


def fit_forest(X, y, params: ForestParams = ForestParams(), n_jobs: int = 1,
               classes: Sequence[int] = CLASSES, feature_names: Sequence[str] | None = None,
               oob: bool = False) -> RandomForestModel:
    """Fit ``params.n_trees`` trees, each on its own bootstrap draw.

    Tree ``i`` draws its bootstrap sample and split candidates from
    ``tree_rng(seed, i)``, so the model is the same for any ``n_jobs``.
    """
    X = _as_matrix(X)
    y = np.asarray(y)
    n, d = X.shape
    if n < 2:
        raise FitError(f"a forest needs at least 2 rows, got {n}")
    presorted = presort(X)

    def one(i: int):
        rng = tree_rng(params.seed, i)
        w = _bootstrap_weights(rng, n) if params.bootstrap else np.ones(n)
        tree = fit_tree(X, y, params.tree, rng, sample_weight=w, classes=classes,
                        presorted=presorted)
        return tree, w

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, range(params.n_trees)))
    else:
        results = [one(i) for i in range(params.n_trees)]
    trees = [t for t, _ in results]
    model = RandomForestModel(trees, params, d, tuple(classes),
                              list(feature_names) if feature_names is not None else None)
    if oob and params.bootstrap:
        votes = np.zeros((n, len(classes)))
        for tree, w in results:
            out = np.flatnonzero(w == 0)
            if len(out):
                votes[out, tree.leaf_classes[tree.apply(X[out])]] += 1.0
        seen = votes.sum(axis=1) > 0
        if seen.any():
            pred = np.asarray(classes)[votes[seen].argmax(axis=1)]
            model.oob_score = float(np.mean(pred == y[seen]))
    return model
