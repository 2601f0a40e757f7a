"""Class rebalancing: SMOTE oversampling and random undersampling.

Applied to the training split only, after encoding and scaling, so neighbour
distances are measured in the scaled feature space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import CLASSES
from .errors import ConfigError, DataError

DEFAULT_K = 5


@dataclass(frozen=True)
class RebalancePolicy:
    """Per-class target counts (``"uniform"`` means ``round(n / 5)`` each)."""

    targets: Mapping[int, int] | str = "uniform"
    k: int = DEFAULT_K
    seed: int = 0
    allow_duplication_fallback: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"SMOTE neighbour count must be >= 1, got {self.k}")
        if isinstance(self.targets, str):
            if self.targets != "uniform":
                raise ConfigError(f"unknown target policy {self.targets!r}")
        else:
            bad = {c: n for c, n in self.targets.items() if n < 1}
            if bad:
                raise ConfigError(f"target counts must be >= 1: {bad}")

    def resolve(self, n: int, classes: Sequence[int] = CLASSES) -> dict[int, int]:
        if self.targets == "uniform":
            each = max(1, round(n / len(classes)))
            return {c: each for c in classes}
        return {int(c): int(t) for c, t in self.targets.items()}

    def to_json(self) -> dict:
        targets = self.targets if isinstance(self.targets, str) else \
            {str(c): n for c, n in sorted(self.targets.items())}
        return {"targets": targets, "k": self.k, "seed": self.seed,
                "allow_duplication_fallback": self.allow_duplication_fallback}

    @classmethod
    def from_json(cls, obj: Mapping) -> "RebalancePolicy":
        unknown = set(obj) - {"targets", "k", "seed", "allow_duplication_fallback"}
        if unknown:
            raise ConfigError(f"unknown rebalance keys: {sorted(unknown)}")
        targets = obj.get("targets", "uniform")
        if not isinstance(targets, str):
            targets = {int(c): int(n) for c, n in targets.items()}
        return cls(targets, int(obj.get("k", DEFAULT_K)), int(obj.get("seed", 0)),
                   bool(obj.get("allow_duplication_fallback", False)))


def nearest_neighbors(X: np.ndarray, rows: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``X`` for each index in ``rows``.

    Euclidean distance, exact; equal distances resolve to the lower index.
    """
    n = X.shape[0]
    sq = np.einsum("ij,ij->i", X, X)
    out = np.empty((len(rows), k), dtype=np.int64)
    for start in range(0, len(rows), chunk):
        sel = rows[start:start + chunk]
        d2 = sq[sel, None] - 2.0 * X[sel] @ X.T + sq[None, :]
        # exact recomputation keeps ties and near-ties deterministic
        d2 = np.maximum(d2, 0.0)
        d2[np.arange(len(sel)), sel] = np.inf
        cand = np.argsort(d2, axis=1, kind="stable")[:, :min(n - 1, k + 8)]
        for i, r in enumerate(sel):
            exact = ((X[cand[i]] - X[r]) ** 2).sum(axis=1)
            keep = np.lexsort((cand[i], exact))[:k]
            out[start + i] = cand[i][keep]
    return out


def snap_onehot(X: np.ndarray, groups: Sequence[np.ndarray]) -> np.ndarray:
    """Set each one-hot group to 1 at its argmax (lowest column on ties), 0 elsewhere.

    Groups that are entirely zero (missing category in both parents) stay zero.
    """
    for g in groups:
        block = X[:, g]
        hot = block.argmax(axis=1)
        live = block.max(axis=1) > 0
        snapped = np.zeros_like(block)
        snapped[np.flatnonzero(live), hot[live]] = 1.0
        X[:, g] = snapped
    return X


@dataclass
class SmoteDraw:
    """Synthetic rows and, for each, the parent row, the neighbour and the gap ``u``."""

    rows: np.ndarray
    parents: np.ndarray
    neighbors: np.ndarray
    gaps: np.ndarray
    unsnapped: np.ndarray = field(repr=False)


def smote_oversample(X: np.ndarray, n_new: int, k: int = DEFAULT_K,
                     rng: np.random.Generator | int | None = 0,
                     onehot_groups: Sequence[np.ndarray] = ()) -> SmoteDraw:
    """Generate ``n_new`` synthetic rows from one class's rows ``X``.

    Each synthetic row is ``x + u * (x_nn - x)`` with ``x`` drawn uniformly,
    ``x_nn`` drawn uniformly from its ``k`` nearest same-class neighbours
    (``k`` truncated to ``len(X) - 1``) and ``u ~ U[0, 1)``.
    """
    X = np.asarray(X, dtype=float)
    if X.shape[0] < 2:
        raise DataError(
            f"SMOTE needs at least 2 rows in a class, got {X.shape[0]}; "
            "enable allow_duplication_fallback to duplicate single-member classes")
    if n_new < 0:
        raise ValueError(f"n_new must be >= 0, got {n_new}")
    rng = np.random.default_rng(rng)
    k = min(k, X.shape[0] - 1)
    parents = rng.integers(0, X.shape[0], size=n_new)
    pick = rng.integers(0, k, size=n_new)
    gaps = rng.random(n_new)
    uniq, inverse = np.unique(parents, return_inverse=True)
    nn = nearest_neighbors(X, uniq, k) if n_new else np.empty((0, k), dtype=np.int64)
    neighbors = nn[inverse, pick] if n_new else np.empty(0, dtype=np.int64)
    base = X[parents]
    synth = base + gaps[:, None] * (X[neighbors] - base)
    unsnapped = synth.copy()
    snap_onehot(synth, onehot_groups)
    return SmoteDraw(synth, parents, neighbors, gaps, unsnapped)


def random_undersample(n_rows: int, n_keep: int, rng: np.random.Generator | int | None = 0
                       ) -> np.ndarray:
    """Sorted indices of ``n_keep`` rows drawn uniformly without replacement."""
    if not 1 <= n_keep:
        raise ValueError(f"n_keep must be >= 1, got {n_keep}")
    if n_keep > n_rows:
        raise DataError(f"cannot keep {n_keep} rows from a class of {n_rows}")
    rng = np.random.default_rng(rng)
    return np.sort(rng.choice(n_rows, size=n_keep, replace=False))


@dataclass
class RebalanceResult:
    X: np.ndarray
    y: np.ndarray
    # indices into the input for the surviving original rows (they come first)
    kept: np.ndarray
    n_synthetic: int
    before: dict[int, int]
    after: dict[int, int]


def class_histogram(y: np.ndarray, classes: Sequence[int] = CLASSES) -> dict[int, int]:
    return {int(c): int(np.sum(y == c)) for c in classes}


def rebalance(X: np.ndarray, y: np.ndarray, policy: RebalancePolicy,
              onehot_groups: Sequence[np.ndarray] = (),
              classes: Sequence[int] = CLASSES) -> RebalanceResult:
    """Resample a training split to exactly the policy's per-class counts."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    targets = policy.resolve(len(y), classes)
    before = class_histogram(y, classes)
    for c in targets:
        if before.get(c, 0) == 0:
            raise DataError(f"class {c} has no training rows; cannot rebalance to {targets[c]}")
    keep_idx, synth_X, synth_y = [], [], []
    for c in sorted(targets):
        members = np.flatnonzero(y == c)
        want = targets[c]
        rng = np.random.default_rng([policy.seed, int(c)])
        if want <= len(members):
            keep_idx.append(members[random_undersample(len(members), want, rng)]
                            if want < len(members) else members)
            continue
        keep_idx.append(members)
        extra = want - len(members)
        if len(members) < 2:
            if not policy.allow_duplication_fallback:
                raise DataError(
                    f"class {c} has a single training row; SMOTE is undefined "
                    "(set allow_duplication_fallback to duplicate it)")
            synth_X.append(np.repeat(X[members], extra, axis=0))
        else:
            synth_X.append(smote_oversample(X[members], extra, policy.k, rng, onehot_groups).rows)
        synth_y.append(np.full(extra, c, dtype=y.dtype))
    kept = np.sort(np.concatenate(keep_idx)) if keep_idx else np.empty(0, dtype=np.int64)
    X_out = np.vstack([X[kept], *synth_X])
    y_out = np.concatenate([y[kept], *synth_y])
    return RebalanceResult(X_out, y_out, kept, len(y_out) - len(kept), before,
                           class_histogram(y_out, classes))
