"""Encoding, scaling, derived features and feature-set materialization.

Three nested feature sets are supported:

* ``M1`` -- lagged descriptive and chart-of-accounts columns;
* ``M2`` -- M1 plus the relative change of selected columns between
  consecutive lags;
* ``M3`` -- M2 plus lagged CAMELS/risk-rating columns and macro indicators.

All statistics (category lists, medians, scaler parameters) are fitted on the
training rows only; :func:`materialize` then applies them to any row set.
Columns are laid out so that each variant's columns are a prefix of the next
one's.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import (ColumnSchema, PeriodIndex, SupervisedRow, lag_suffix, parse_period,
                     _is_missing)
from .errors import ConfigError, DataError, FitError, StructuralError

VARIANTS = ("M1", "M2", "M3")
SCALERS = ("standardize", "minmax", "lognormal")
IMPUTATIONS = ("median",)
DEFAULT_CAP = 10.0
MACRO_INDICATORS = ("cpi", "unemployment_rate", "gdp")
CAMELS_GROUP = "camels"
UNKNOWN = "__unknown__"
MINMAX_CLIP = (-0.5, 1.5)


@dataclass(frozen=True)
class FeatureSetConfig:
    variant: str = "M3"
    scaler: str = "lognormal"
    cap: float = DEFAULT_CAP
    imputation: str = "median"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown feature variant {self.variant!r}; expected one of {VARIANTS}")
        if self.scaler not in SCALERS:
            raise ConfigError(f"unknown scaler {self.scaler!r}; expected one of {SCALERS}")
        if self.imputation not in IMPUTATIONS:
            raise ConfigError(f"unknown imputation {self.imputation!r}")
        if not self.cap > 0:
            raise ConfigError(f"variation cap must be positive, got {self.cap}")

    @property
    def level(self) -> int:
        return VARIANTS.index(self.variant) + 1

    def to_json(self) -> dict:
        return {"variant": self.variant, "scaler": self.scaler, "cap": self.cap,
                "imputation": self.imputation}

    @classmethod
    def from_json(cls, obj: Mapping) -> "FeatureSetConfig":
        unknown = set(obj) - {"variant", "scaler", "cap", "imputation"}
        if unknown:
            raise ConfigError(f"unknown feature-set keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass(frozen=True)
class ColumnInfo:
    """Provenance of one matrix column."""

    name: str
    source: str
    lag: str | None
    transform: str
    group: str

    def to_json(self) -> dict:
        return {"name": self.name, "source": self.source, "lag": self.lag,
                "transform": self.transform, "group": self.group}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ColumnInfo":
        return cls(**obj)


def variant_columns(schema: ColumnSchema, variant: str) -> tuple[list[str], list[str]]:
    """Base (categorical, numeric) columns lagged into ``variant``.

    Numeric columns come back in layout order: M1 columns, then the
    CAMELS columns (present only in M3).
    """
    level = VARIANTS.index(variant) + 1
    cats, plain, camels = [], [], []
    for c in schema.feature_columns:
        if c.group == CAMELS_GROUP:
            if level >= 3:
                camels.append(c.name)
        elif c.kind == "categorical":
            cats.append(c.name)
        else:
            plain.append(c.name)
    return cats, plain + camels


# --------------------------------------------------------------------------
# One-hot encoding
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderSpec:
    categories: Mapping[str, tuple[str, ...]]

    @property
    def width(self) -> int:
        """Slots per lag: each column's categories plus its unknown slot."""
        return sum(len(c) + 1 for c in self.categories.values())

    def to_json(self) -> list[dict]:
        # a list, not an object: column order fixes the matrix layout and must
        # survive serializers that sort keys
        return [{"column": name, "categories": list(cats)}
                for name, cats in self.categories.items()]

    @classmethod
    def from_json(cls, obj: Sequence[Mapping]) -> "EncoderSpec":
        return cls({e["column"]: tuple(e["categories"]) for e in obj})


def fit_encoder(rows: Sequence[SupervisedRow], schema: ColumnSchema,
                columns: Sequence[str] | None = None) -> EncoderSpec:
    """Learn the sorted category list of each categorical column over all lags."""
    if not rows:
        raise FitError("cannot fit encoder on zero rows")
    columns = schema.categorical if columns is None else list(columns)
    cats = {}
    for col in columns:
        seen = {v for row in rows for lag in row.lags
                if not _is_missing(v := lag.get(col))}
        if not seen:
            raise FitError(f"categorical column {col!r} has no observed values")
        cats[col] = tuple(sorted(seen))
    return EncoderSpec(cats)


@dataclass
class EncodedBlock:
    matrix: np.ndarray
    manifest: list[ColumnInfo]
    missing: Counter = field(default_factory=Counter)


def apply_encoding(spec: EncoderSpec, rows: Sequence[SupervisedRow],
                   columns: Sequence[str] | None = None,
                   groups: Mapping[str, str] | None = None) -> EncodedBlock:
    """Replace categorical columns by one-hot groups, one group per lag.

    Unseen categories go to the column's unknown slot; a missing value leaves
    the whole group at zero and is counted in ``missing``.
    """
    columns = list(spec.categories) if columns is None else list(columns)
    absent = [c for c in columns if c not in spec.categories]
    if absent:
        raise StructuralError(f"columns not covered by the fitted encoder: {absent}")
    window = rows[0].window if rows else 0
    widths = [len(spec.categories[c]) + 1 for c in columns]
    total = sum(widths) * window
    mat = np.zeros((len(rows), total))
    manifest: list[ColumnInfo] = []
    missing: Counter = Counter()
    offset = 0
    for col, width in zip(columns, widths):
        cats = spec.categories[col]
        slot = {c: i for i, c in enumerate(cats)}
        group = (groups or {}).get(col, "categorical")
        for i in range(window):
            suffix = lag_suffix(window - i)
            for cat in cats + (UNKNOWN,):
                manifest.append(ColumnInfo(f"{col}@{suffix}={cat}", col, suffix, "onehot", group))
            for r, row in enumerate(rows):
                v = row.lags[i].get(col)
                if _is_missing(v):
                    missing[f"{col}@{suffix}"] += 1
                    continue
                mat[r, offset + slot.get(v, width - 1)] = 1.0
            offset += width
    return EncodedBlock(mat, manifest, missing)


# --------------------------------------------------------------------------
# Scaling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalerSpec:
    kind: str
    n_columns: int
    stats: Mapping[str, np.ndarray] = field(default_factory=dict)
    constant: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {"kind": self.kind, "n_columns": self.n_columns,
                "stats": {k: v.tolist() for k, v in self.stats.items()},
                "constant": list(self.constant)}

    @classmethod
    def from_json(cls, obj: Mapping) -> "ScalerSpec":
        return cls(obj["kind"], obj["n_columns"],
                   {k: np.asarray(v, dtype=float) for k, v in obj["stats"].items()},
                   tuple(obj["constant"]))


def fit_scaler(matrix: np.ndarray, kind: str) -> ScalerSpec:
    """Per-column statistics for ``kind`` computed from ``matrix`` (training rows)."""
    if kind not in SCALERS:
        raise ConfigError(f"unknown scaler {kind!r}")
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise StructuralError("scaler expects a 2-D matrix")
    n, m = matrix.shape
    if kind == "lognormal":
        return ScalerSpec(kind, m)
    if n < 2:
        raise FitError(f"{kind} scaler needs at least 2 rows, got {n}")
    if not np.isfinite(matrix).all():
        raise FitError("scaler input contains missing or non-finite values")
    if kind == "standardize":
        mean = matrix.mean(axis=0)
        std = matrix.std(axis=0)
        # rounding can leave a tiny nonzero std on a constant column, and
        # subnormal spreads underflow to zero; both scale to 0
        flat = (matrix.max(axis=0) == matrix.min(axis=0)) | (std == 0)
        std[flat] = 0.0
        constant = tuple(int(j) for j in np.flatnonzero(flat))
        return ScalerSpec(kind, m, {"mean": mean, "std": std}, constant)
    lo, hi = matrix.min(axis=0), matrix.max(axis=0)
    constant = tuple(int(j) for j in np.flatnonzero(hi == lo))
    return ScalerSpec(kind, m, {"min": lo, "max": hi}, constant)


def signed_log(x):
    """``sign(x) * ln(1 + |x|)``: odd, strictly increasing, defined everywhere."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.log1p(np.abs(x))


def apply_scaler(spec: ScalerSpec, matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != spec.n_columns:
        raise StructuralError(
            f"scaler fitted on {spec.n_columns} columns, got shape {matrix.shape}")
    if spec.kind == "lognormal":
        return signed_log(matrix)
    if spec.kind == "standardize":
        mean, std = spec.stats["mean"], spec.stats["std"]
        safe = np.where(std > 0, std, 1.0)
        return np.where(std > 0, (matrix - mean) / safe, 0.0)
    lo, hi = spec.stats["min"], spec.stats["max"]
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (matrix - lo) / safe, 0.0)
    return np.clip(out, *MINMAX_CLIP)


# --------------------------------------------------------------------------
# Derived features
# --------------------------------------------------------------------------

def rel_change(prev, curr, cap: float = DEFAULT_CAP) -> float:
    """Relative change from ``prev`` to ``curr`` with a zero guard, clipped to ``[-cap, cap]``."""
    if _is_missing(prev) or _is_missing(curr):
        return math.nan
    if prev == 0:
        if curr == 0:
            return 0.0
        return math.copysign(cap, curr)
    return max(-cap, min(cap, (curr - prev) / abs(prev)))


def variation_name(column: str, older: int, newer: int) -> str:
    return f"var_{column}@{lag_suffix(older)}>{lag_suffix(newer)}"


def variation_names(columns: Sequence[str], window: int) -> list[str]:
    return [variation_name(c, k, k - 1) for c in columns for k in range(window, 1, -1)]


def compute_variations(rows: Sequence[SupervisedRow], columns: Sequence[str],
                       cap: float = DEFAULT_CAP) -> list[SupervisedRow]:
    """Append the relative change between each pair of consecutive lags."""
    if not rows:
        return []
    known = set().union(*(lag.keys() for lag in rows[0].lags))
    absent = [c for c in columns if c not in known]
    if absent:
        raise ConfigError(f"variation columns absent from rows: {absent}")
    out = []
    for row in rows:
        w = row.window
        new = dict(row.derived)
        for c in columns:
            for k in range(w, 1, -1):
                new[variation_name(c, k, k - 1)] = rel_change(row.value(c, k), row.value(c, k - 1), cap)
        out.append(replace(row, derived=new))
    return out


@dataclass(frozen=True)
class MacroTable:
    """Macro indicators per period: (cpi, unemployment_rate, gdp)."""

    values: Mapping[int, tuple[float, float, float]]

    def __contains__(self, period: PeriodIndex) -> bool:
        return period.value in self.values

    def __getitem__(self, period: PeriodIndex) -> tuple[float, float, float]:
        return self.values[period.value]

    @property
    def periods(self) -> list[PeriodIndex]:
        return [PeriodIndex(p) for p in sorted(self.values)]

    def to_json(self) -> dict:
        return {str(PeriodIndex(p)): list(v) for p, v in sorted(self.values.items())}

    @classmethod
    def from_json(cls, obj: Mapping) -> "MacroTable":
        return cls({parse_period(p).value: tuple(float(x) for x in v) for p, v in obj.items()})


def read_macro_csv(path: str | Path) -> MacroTable:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"macro file not found: {path}")
    values = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"period", *MACRO_INDICATORS}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: macro CSV needs columns {sorted(need)}")
        for line in reader:
            p = parse_period(line["period"])
            try:
                values[p.value] = tuple(float(line[k]) for k in MACRO_INDICATORS)
            except ValueError as exc:
                raise DataError(f"{path}: bad macro value for {p}: {exc}") from exc
    return MacroTable(values)


def write_macro_csv(table: MacroTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["period", *MACRO_INDICATORS])
        for p in table.periods:
            writer.writerow([str(p), *(repr(float(v)) for v in table[p])])


def macro_names(window: int) -> list[str]:
    return [f"{ind}@{lag_suffix(k)}" for ind in MACRO_INDICATORS for k in range(window, 0, -1)]


def enrich_macro(rows: Sequence[SupervisedRow], macro: MacroTable) -> list[SupervisedRow]:
    """Append each indicator at each lag period, ordered (indicator, lag)."""
    missing = sorted({p.value for row in rows for p in row.lag_periods if p not in macro})
    if missing:
        listed = ", ".join(f"{PeriodIndex(p)} ({p})" for p in missing)
        raise DataError(f"macro table missing periods: {listed}")
    out = []
    for row in rows:
        new = dict(row.derived)
        periods = row.lag_periods
        for j, ind in enumerate(MACRO_INDICATORS):
            for i, p in enumerate(periods):
                new[f"{ind}@{lag_suffix(row.window - i)}"] = macro[p][j]
        out.append(replace(row, derived=new))
    return out


# --------------------------------------------------------------------------
# Materialization
# --------------------------------------------------------------------------

@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    entity_ids: list[str]
    target_periods: list[PeriodIndex]
    manifest: list[ColumnInfo]
    counters: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.manifest]

    @property
    def onehot_groups(self) -> list[np.ndarray]:
        return onehot_groups(self.manifest)


def onehot_groups(manifest: Sequence[ColumnInfo]) -> list[np.ndarray]:
    groups: dict[tuple[str, str | None], list[int]] = {}
    for j, c in enumerate(manifest):
        if c.transform == "onehot":
            groups.setdefault((c.source, c.lag), []).append(j)
    return [np.asarray(v) for v in groups.values()]


@dataclass(frozen=True)
class Preprocessor:
    """Everything fitted on the training rows that :func:`materialize` needs."""

    config: FeatureSetConfig
    schema: ColumnSchema
    window: int
    encoder: EncoderSpec
    numeric_names: tuple[str, ...]
    medians: np.ndarray
    scaler: ScalerSpec
    manifest: tuple[ColumnInfo, ...]

    @property
    def n_features(self) -> int:
        return len(self.manifest)

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "schema": self.schema.to_json(),
            "window": self.window,
            "encoder": self.encoder.to_json(),
            "numeric_names": list(self.numeric_names),
            "medians": self.medians.tolist(),
            "scaler": self.scaler.to_json(),
            "manifest": [c.to_json() for c in self.manifest],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "Preprocessor":
        pre = cls._from_json(obj)
        expected = [f"{col}@{lag_suffix(pre.window - i)}={cat}"
                    for col, cats in pre.encoder.categories.items()
                    for i in range(pre.window) for cat in cats + (UNKNOWN,)]
        expected += list(pre.numeric_names)
        if expected != [c.name for c in pre.manifest]:
            raise ConfigError("preprocessor manifest does not match its encoder and numeric layout")
        return pre

    @classmethod
    def _from_json(cls, obj: Mapping) -> "Preprocessor":
        return cls(
            FeatureSetConfig.from_json(obj["config"]),
            ColumnSchema.from_json(obj["schema"]),
            int(obj["window"]),
            EncoderSpec.from_json(obj["encoder"]),
            tuple(obj["numeric_names"]),
            np.asarray(obj["medians"], dtype=float),
            ScalerSpec.from_json(obj["scaler"]),
            tuple(ColumnInfo.from_json(c) for c in obj["manifest"]),
        )


def _numeric_layout(schema: ColumnSchema, config: FeatureSetConfig, window: int
                    ) -> tuple[list[str], list[ColumnInfo]]:
    """Names and provenance of the numeric block, before scaling."""
    _, numeric = variant_columns(schema, config.variant)
    plain = [c for c in numeric if schema[c].group != CAMELS_GROUP]
    camels = [c for c in numeric if schema[c].group == CAMELS_GROUP]
    names, info = [], []

    def lagged(cols):
        for c in cols:
            for k in range(window, 0, -1):
                names.append(f"{c}@{lag_suffix(k)}")
                info.append(ColumnInfo(names[-1], c, lag_suffix(k), config.scaler, schema[c].group))

    lagged(plain)
    if config.level >= 2:
        for c in schema.variation_columns:
            for k in range(window, 1, -1):
                names.append(variation_name(c, k, k - 1))
                info.append(ColumnInfo(names[-1], c, f"{lag_suffix(k)}>{lag_suffix(k - 1)}",
                                       f"variation+{config.scaler}", "variation"))
    if config.level >= 3:
        lagged(camels)
        for ind in MACRO_INDICATORS:
            for k in range(window, 0, -1):
                names.append(f"{ind}@{lag_suffix(k)}")
                info.append(ColumnInfo(names[-1], ind, lag_suffix(k), config.scaler, "macro"))
    return names, info


def _raw_numeric(rows: Sequence[SupervisedRow], names: Sequence[str], window: int) -> np.ndarray:
    out = np.empty((len(rows), len(names)))
    for j, name in enumerate(names):
        col, _, suffix = name.partition("@")
        if name.startswith("var_") or col in MACRO_INDICATORS:
            vals = [row.derived.get(name) for row in rows]
        else:
            i = window - int(suffix[2:])
            vals = [row.lags[i].get(col) for row in rows]
        out[:, j] = [math.nan if v is None else v for v in vals]
    return out


def _check_derived(rows: Sequence[SupervisedRow], config: FeatureSetConfig, window: int) -> None:
    if not rows:
        return
    probe = rows[0].derived
    if config.level >= 3 and any(n not in probe for n in macro_names(window)):
        raise DataError("M3 features need macro enrichment: call enrich_macro first")
    if config.level >= 2 and not any(n.startswith("var_") for n in probe):
        raise DataError(f"{config.variant} features need variation features: call compute_variations first")


def fit_preprocessor(rows: Sequence[SupervisedRow], schema: ColumnSchema,
                     config: FeatureSetConfig) -> Preprocessor:
    """Fit encoder, medians and scaler on training rows."""
    if not rows:
        raise FitError("cannot fit preprocessing on zero rows")
    window = rows[0].window
    _check_derived(rows, config, window)
    cats, _ = variant_columns(schema, config.variant)
    encoder = fit_encoder(rows, schema, cats)
    names, num_info = _numeric_layout(schema, config, window)
    raw = _raw_numeric(rows, names, window)
    medians = np.zeros(len(names))
    observed = ~np.isnan(raw)
    for j in range(len(names)):
        if observed[:, j].any():
            medians[j] = float(np.median(raw[observed[:, j], j]))
    filled = np.where(observed, raw, medians)
    scaler = fit_scaler(filled, config.scaler)
    groups = {c: schema[c].group for c in cats}
    onehot = apply_encoding(encoder, rows[:1], cats, groups).manifest
    return Preprocessor(config, schema, window, encoder, tuple(names), medians, scaler,
                        tuple(onehot + num_info))


def materialize(rows: Sequence[SupervisedRow], config: FeatureSetConfig,
                fitted: Preprocessor | None) -> FeatureMatrix:
    """Build the dense, imputed, scaled matrix for ``config.variant``."""
    if fitted is None:
        raise ConfigError("feature config references an unfitted preprocessor")
    if fitted.config != config:
        raise ConfigError(
            f"preprocessor fitted for {fitted.config.to_json()}, asked for {config.to_json()}")
    window = fitted.window
    if rows and rows[0].window != window:
        raise StructuralError(f"rows have window {rows[0].window}, preprocessor expects {window}")
    _check_derived(rows, config, window)
    cats = list(fitted.encoder.categories)
    groups = {c: fitted.schema[c].group for c in cats}
    if rows:
        block = apply_encoding(fitted.encoder, rows, cats, groups)
        onehot, cat_missing = block.matrix, block.missing
    else:
        onehot, cat_missing = np.zeros((0, fitted.encoder.width * window)), Counter()
    raw = _raw_numeric(rows, fitted.numeric_names, window)
    missing = np.isnan(raw)
    filled = np.where(missing, fitted.medians, raw)
    scaled = apply_scaler(fitted.scaler, filled)
    X = np.hstack([onehot, scaled]) if rows else np.zeros((0, fitted.n_features))
    imputed = {name: int(k) for name, k in zip(fitted.numeric_names, missing.sum(axis=0)) if k}
    counters = {
        "imputed_numeric": imputed,
        "missing_categorical": dict(sorted(cat_missing.items())),
        # distinct variables before lag-tripling; a variation counts apart from its source
        "base_variables": len({(c.source, c.group == "variation") for c in fitted.manifest}),
        "pre_encoding_columns": len(cats) * window + len(fitted.numeric_names),
        "encoded_columns": fitted.n_features,
    }
    y = np.array([0 if r.target is None else r.target for r in rows], dtype=np.int64)
    return FeatureMatrix(X, y, [r.entity_id for r in rows], [r.target_period for r in rows],
                         list(fitted.manifest), counters)


def prepare_rows(rows: Sequence[SupervisedRow], schema: ColumnSchema, config: FeatureSetConfig,
                 macro: MacroTable | None = None) -> list[SupervisedRow]:
    """Attach the derived features ``config.variant`` needs."""
    rows = list(rows)
    if config.level >= 2:
        rows = compute_variations(rows, schema.variation_columns, config.cap)
    if config.level >= 3:
        if macro is None:
            raise ConfigError("M3 features need a macro table")
        rows = enrich_macro(rows, macro)
    return rows
