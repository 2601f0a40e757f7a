"""Stratified holdout splits, confusion matrices and per-class metrics.

The per-class "accuracy" of the risk tables is ambiguous: its formula divides
by the number of companies *predicted* in a class (precision) while the
published matrices are normalized by *actual* class (recall). Both are
computed and labelled explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .domain import CLASSES
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class SplitSpec:
    fraction: float = 0.7
    seed: int = 0
    stratify: bool = True

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ConfigError(f"train fraction must be in (0, 1), got {self.fraction}")

    def to_json(self) -> dict:
        return {"fraction": self.fraction, "seed": self.seed, "stratify": self.stratify}

    @classmethod
    def from_json(cls, obj: Mapping) -> "SplitSpec":
        unknown = set(obj) - {"fraction", "seed", "stratify"}
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        return cls(float(obj.get("fraction", 0.7)), int(obj.get("seed", 0)),
                   bool(obj.get("stratify", True)))


def _exact(fraction: float) -> Fraction:
    # the decimal literal, not its binary approximation: floor(0.7 * 100) must be 70
    return Fraction(repr(float(fraction)))


def allocate_train_counts(class_sizes: Mapping[int, int], fraction: float) -> dict[int, int]:
    """Per-class training seats: floors plus largest-remainder leftovers.

    The total is exactly ``floor(fraction * n)``; leftover seats go to the
    largest fractional remainders, ties to the lower class.
    """
    frac = _exact(fraction)
    n = sum(class_sizes.values())
    n_train = math.floor(frac * n)
    seats, remainders = {}, []
    for c in sorted(class_sizes):
        share = frac * class_sizes[c]
        seats[c] = math.floor(share)
        remainders.append((-(share - seats[c]), c))
    for _, c in sorted(remainders)[:n_train - sum(seats.values())]:
        seats[c] += 1
    return seats


def stratified_split(labels: Sequence[int], spec: SplitSpec = SplitSpec()
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint, covering (train, test) index arrays, each sorted ascending."""
    y = np.asarray(labels)
    n = len(y)
    n_train = math.floor(_exact(spec.fraction) * n)
    if n_train == 0 or n_train == n:
        raise DataError(f"fraction {spec.fraction} on {n} rows leaves an empty train or test set")
    if not spec.stratify:
        perm = np.random.default_rng(spec.seed).permutation(n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    classes = sorted(int(c) for c in np.unique(y))
    sizes = {c: int(np.sum(y == c)) for c in classes}
    seats = allocate_train_counts(sizes, spec.fraction)
    train = []
    for c in classes:
        members = np.flatnonzero(y == c)
        rng = np.random.default_rng([spec.seed, c])
        train.append(members[rng.permutation(len(members))[:seats[c]]])
    train_idx = np.sort(np.concatenate(train))
    mask = np.ones(n, dtype=bool)
    mask[train_idx] = False
    return train_idx, np.flatnonzero(mask)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = actual class, columns = predicted class."""

    counts: np.ndarray
    classes: tuple[int, ...] = CLASSES

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def __getitem__(self, key):
        i, j = key
        return int(self.counts[self.classes.index(i), self.classes.index(j)])


def confusion_matrix(y_true, y_pred, classes: Sequence[int] = CLASSES) -> ConfusionMatrix:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise DataError(f"y_true has {len(y_true)} labels, y_pred has {len(y_pred)}")
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for idx, (t, p) in enumerate(zip(y_true.tolist(), y_pred.tolist())):
        if t not in pos or p not in pos:
            bad = t if t not in pos else p
            raise DataError(f"label {bad!r} at index {idx} outside {tuple(classes)}")
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(counts, tuple(classes))


def integer_percents(row: Sequence[int]) -> list[int] | None:
    """Row counts as integer percents summing to exactly 100 (largest remainder)."""
    total = sum(row)
    if total == 0:
        return None
    exact = [Fraction(100 * c, total) for c in row]
    floors = [math.floor(x) for x in exact]
    order = sorted(range(len(row)), key=lambda j: (-(exact[j] - floors[j]), j))
    for j in order[:100 - sum(floors)]:
        floors[j] += 1
    return floors


@dataclass(frozen=True)
class MetricsReport:
    classes: tuple[int, ...]
    counts: np.ndarray
    precision: list[float | None]
    recall: list[float | None]
    accuracy: float
    support: list[int]
    row_pct: list[list[float] | None]

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_pct_int(self) -> list[list[int] | None]:
        return [integer_percents(r) for r in self.counts.tolist()]

    def to_json(self) -> dict:
        return {
            "classes": list(self.classes),
            "counts": self.counts.tolist(),
            "row_pct": self.row_pct,
            "row_pct_int": self.row_pct_int,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "support": self.support,
            "n": self.n,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "MetricsReport":
        return cls(tuple(obj["classes"]), np.asarray(obj["counts"], dtype=np.int64),
                   obj["precision"], obj["recall"], obj["accuracy"], obj["support"],
                   obj["row_pct"])


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class precision and recall (``None`` when undefined) and overall accuracy."""
    counts = cm.counts
    n = int(counts.sum())
    if n == 0:
        raise DataError("metrics need at least one prediction")
    diag = np.diag(counts)
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    precision = [float(diag[i] / col[i]) if col[i] else None for i in range(len(cm.classes))]
    recall = [float(diag[i] / row[i]) if row[i] else None for i in range(len(cm.classes))]
    row_pct = [[float(100.0 * v / row[i]) for v in counts[i]] if row[i] else None
               for i in range(len(cm.classes))]
    return MetricsReport(cm.classes, counts.copy(), precision, recall,
                         float(diag.sum() / n), [int(r) for r in row], row_pct)


def render_table(report: MetricsReport) -> str:
    """Row-normalized matrix in integer percents; zero off-diagonal cells are blank."""
    width = 7
    lines = ["actual\\pred" + "".join(f"{c:>{width}}" for c in report.classes)]
    for i, c in enumerate(report.classes):
        pct = report.row_pct_int[i]
        cells = []
        for j in range(len(report.classes)):
            if pct is None or (report.counts[i, j] == 0 and i != j):
                cells.append(" " * width)
            else:
                cells.append(f"{pct[j]:>{width - 1}}%")
        lines.append(f"{c:>11}" + "".join(cells))
    lines.append("")
    lines.append(f"overall accuracy: {100 * report.accuracy:.2f}%  (n = {report.n})")
    lines.append("class   support  precision   recall")
    for i, c in enumerate(report.classes):
        p = "-" if report.precision[i] is None else f"{100 * report.precision[i]:.1f}%"
        r = "-" if report.recall[i] is None else f"{100 * report.recall[i]:.1f}%"
        lines.append(f"{c:>5} {report.support[i]:>9} {p:>10} {r:>8}")
    return "\n".join(lines) + "\n"
