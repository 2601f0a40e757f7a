"""Panel data model and lag-window construction.

An SEE files one record per semester. Records are keyed by ``(entity_id,
period)`` where the period is a semester counter (``year * 2 + semester - 1``).
:func:`build_lag_windows` turns each run of strictly consecutive filings into
supervised rows: the values at ``t-3, t-2, t-1`` become the features and the
risk label at ``t`` becomes the target.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import total_ordering
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

from .errors import ConfigError, DataError, ParseError

CLASSES = (1, 2, 3, 4, 5)
KINDS = ("identifier", "period", "categorical", "continuous", "count", "target")
NUMERIC_KINDS = ("continuous", "count")
DEFAULT_WINDOW = 3
MAX_MISSING_FRACTION = 0.2

_PERIOD_RE = re.compile(r"^(\d{4})-(\d)$")


@total_ordering
@dataclass(frozen=True)
class PeriodIndex:
    """Semester counter; ``"2016-1"`` is 4032 and ``"2016-2"`` is 4033."""

    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError(f"period index must be >= 0, got {self.value}")

    @property
    def year(self) -> int:
        return self.value // 2

    @property
    def semester(self) -> int:
        return self.value % 2 + 1

    def successor(self) -> "PeriodIndex":
        return PeriodIndex(self.value + 1)

    def __add__(self, offset: int) -> "PeriodIndex":
        return PeriodIndex(self.value + offset)

    def __sub__(self, offset: int) -> "PeriodIndex":
        return PeriodIndex(self.value - offset)

    def __lt__(self, other: "PeriodIndex") -> bool:
        return self.value < other.value

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.semester}"


def parse_period(text: str) -> PeriodIndex:
    """Parse ``"YYYY-S"`` (S in {1, 2}) into a :class:`PeriodIndex`."""
    m = _PERIOD_RE.match(text.strip()) if isinstance(text, str) else None
    if m is None:
        raise ParseError(f"malformed period {text!r}: expected 'YYYY-S'")
    year, semester = int(m.group(1)), int(m.group(2))
    if semester not in (1, 2):
        raise ParseError(f"invalid semester {semester} in period {text!r}: must be 1 or 2")
    return PeriodIndex(year * 2 + semester - 1)


def format_period(period: PeriodIndex) -> str:
    return str(period)


# --------------------------------------------------------------------------
# Schema
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple[str, ...] | None = None
    nullable: bool = True
    group: str | None = None
    labels: tuple[str, ...] = ()
    # Source-list label of the period-over-period variation derived from this column.
    variation: str | None = None

    def to_json(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.categories is not None:
            out["categories"] = list(self.categories)
        out["nullable"] = self.nullable
        if self.group is not None:
            out["group"] = self.group
        out["labels"] = list(self.labels)
        if self.variation is not None:
            out["variation"] = self.variation
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "ColumnSpec":
        cats = obj.get("categories")
        return cls(
            name=obj["name"],
            kind=obj["kind"],
            categories=tuple(cats) if cats is not None else None,
            nullable=bool(obj.get("nullable", True)),
            group=obj.get("group"),
            labels=tuple(obj.get("labels", ())),
            variation=obj.get("variation"),
        )


@dataclass(frozen=True)
class ColumnSchema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dup = sorted(n for n, k in Counter(names).items() if k > 1)
            raise ConfigError(f"duplicate column names in schema: {dup}")
        for c in self.columns:
            if c.kind not in KINDS:
                raise ConfigError(f"column {c.name!r}: unknown kind {c.kind!r}")
        for kind in ("identifier", "period", "target"):
            n = sum(c.kind == kind for c in self.columns)
            if n != 1:
                raise ConfigError(f"schema needs exactly one {kind} column, found {n}")
        object.__setattr__(self, "_by_name", {c.name: c for c in self.columns})

    def __getitem__(self, name: str) -> ColumnSpec:
        return self._by_name[name]

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def __iter__(self) -> Iterator[ColumnSpec]:
        return iter(self.columns)

    def _single(self, kind: str) -> str:
        return next(c.name for c in self.columns if c.kind == kind)

    @property
    def identifier(self) -> str:
        return self._single("identifier")

    @property
    def period(self) -> str:
        return self._single("period")

    @property
    def target(self) -> str:
        return self._single("target")

    @property
    def feature_columns(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.kind in ("categorical",) + NUMERIC_KINDS]

    @property
    def categorical(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "categorical"]

    @property
    def numeric(self) -> list[str]:
        return [c.name for c in self.columns if c.kind in NUMERIC_KINDS]

    @property
    def variation_columns(self) -> list[str]:
        return [c.name for c in self.columns if c.variation is not None]

    def to_json(self) -> list[dict]:
        return [c.to_json() for c in self.columns]

    @classmethod
    def from_json(cls, obj: Sequence[Mapping]) -> "ColumnSchema":
        return cls(tuple(ColumnSpec.from_json(o) for o in obj))


def load_schema(path: str | Path) -> ColumnSchema:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"schema file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"schema file {path} is not valid JSON: {exc}") from exc
    return ColumnSchema.from_json(obj)


def default_schema() -> ColumnSchema:
    """The schema shipped with the package, one entry per listed variable."""
    text = resources.files("seerisk").joinpath("schema/variables.json").read_text(encoding="utf-8")
    return ColumnSchema.from_json(json.loads(text))


# --------------------------------------------------------------------------
# Records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EntityPeriodRecord:
    entity_id: str
    period: PeriodIndex
    values: Mapping[str, Any]
    risk_label: int | None = None


@dataclass
class PanelDataset:
    schema: ColumnSchema
    records: list[EntityPeriodRecord]
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def by_entity(self) -> dict[str, list[EntityPeriodRecord]]:
        """Records grouped per entity, each group sorted by period."""
        groups: dict[str, list[EntityPeriodRecord]] = {}
        for rec in self.records:
            groups.setdefault(rec.entity_id, []).append(rec)
        for recs in groups.values():
            recs.sort(key=lambda r: r.period.value)
        return dict(sorted(groups.items()))


@dataclass(frozen=True)
class Violation:
    entity_id: str
    period: PeriodIndex | None
    column: str | None
    message: str

    def __str__(self) -> str:
        where = f"{self.entity_id}@{self.period}" if self.period is not None else self.entity_id
        col = f" [{self.column}]" if self.column else ""
        return f"{where}{col}: {self.message}"


def _is_missing(v) -> bool:
    return v is None or (isinstance(v, float) and math.isnan(v))


def validate_dataset(data: PanelDataset) -> list[Violation]:
    """Check kinds, label range and key uniqueness. Returns violations; never raises."""
    schema = data.schema
    report: list[Violation] = []
    specs = {c.name: c for c in schema.feature_columns}
    seen: set[tuple[str, int]] = set()
    for rec in data.records:
        key = (rec.entity_id, rec.period.value)
        if key in seen:
            report.append(Violation(rec.entity_id, rec.period, None,
                                    "duplicate (entity_id, period) pair"))
        seen.add(key)
        if rec.risk_label is not None and rec.risk_label not in CLASSES:
            report.append(Violation(rec.entity_id, rec.period, schema.target,
                                    f"risk label {rec.risk_label!r} outside 1..5"))
        for name, value in rec.values.items():
            spec = specs.get(name)
            if spec is None:
                report.append(Violation(rec.entity_id, rec.period, name, "column not in schema"))
                continue
            msg = _check_value(spec, value)
            if msg:
                report.append(Violation(rec.entity_id, rec.period, name, msg))
        for name, spec in specs.items():
            if not spec.nullable and _is_missing(rec.values.get(name)):
                report.append(Violation(rec.entity_id, rec.period, name, "missing non-nullable value"))
    return report


def _check_value(spec: ColumnSpec, value) -> str | None:
    if _is_missing(value):
        return None
    if spec.kind == "categorical":
        if not isinstance(value, str):
            return f"categorical value {value!r} is not a token"
        if spec.categories is not None and value not in spec.categories:
            return f"category {value!r} not allowed"
    elif spec.kind == "continuous":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            return f"continuous value {value!r} is not a finite number"
    elif spec.kind == "count":
        if isinstance(value, bool) or not isinstance(value, int) or value < 0:
            return f"count value {value!r} is not a non-negative integer"
    return None


# --------------------------------------------------------------------------
# Lag windows
# --------------------------------------------------------------------------

def lag_suffix(offset: int) -> str:
    return f"t-{offset}"


@dataclass(frozen=True)
class SupervisedRow:
    """Features from ``window`` consecutive periods plus the label at ``t``.

    ``lags[0]`` holds the oldest period (``t-window``) and ``lags[-1]`` the
    most recent (``t-1``). ``target`` is ``None`` for scoring rows.
    """

    entity_id: str
    target_period: PeriodIndex
    lags: tuple[Mapping[str, Any], ...]
    target: int | None
    derived: Mapping[str, float] = field(default_factory=dict)

    @property
    def window(self) -> int:
        return len(self.lags)

    @property
    def lag_periods(self) -> list[PeriodIndex]:
        return [self.target_period - (self.window - i) for i in range(self.window)]

    def value(self, column: str, offset: int):
        """Value of ``column`` at ``t - offset``."""
        return self.lags[self.window - offset].get(column)

    @property
    def lagged(self) -> dict[str, Any]:
        out = {}
        for i, vals in enumerate(self.lags):
            suffix = lag_suffix(self.window - i)
            for name, v in vals.items():
                out[f"{name}@{suffix}"] = v
        return out


@dataclass
class LagWindows:
    rows: list[SupervisedRow]
    dropped: Counter = field(default_factory=Counter)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]


def consecutive_runs(periods: Iterable[int]) -> list[list[int]]:
    """Split sorted period counters into maximal runs of consecutive values."""
    runs: list[list[int]] = []
    for p in sorted(periods):
        if runs and p == runs[-1][-1] + 1:
            runs[-1].append(p)
        else:
            runs.append([p])
    return runs


def _too_sparse(lags: Sequence[Mapping], numeric: Sequence[str], max_missing: float) -> bool:
    if not numeric:
        return False
    missing = sum(_is_missing(vals.get(c)) for vals in lags for c in numeric)
    return missing > max_missing * len(numeric) * len(lags)


def build_lag_windows(data: PanelDataset, window: int = DEFAULT_WINDOW,
                      max_missing: float = MAX_MISSING_FRACTION) -> LagWindows:
    """Emit one :class:`SupervisedRow` per position ``t`` that has ``window``
    consecutive predecessors in the same run.

    A run of ``L`` consecutive periods yields ``max(0, L - window)`` rows.
    Rows whose target label is missing, or whose lagged numeric values are
    more than ``max_missing`` missing, are dropped and counted in
    ``LagWindows.dropped``. Output is ordered by entity id, then target period.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    numeric = data.schema.numeric
    out = LagWindows(rows=[])
    for entity, recs in data.by_entity().items():
        by_period = {r.period.value: r for r in recs}
        for run in consecutive_runs(by_period):
            for j in range(window, len(run)):
                target = by_period[run[j]]
                if target.risk_label is None:
                    out.dropped["missing_target"] += 1
                    continue
                lags = tuple(by_period[run[j - window + i]].values for i in range(window))
                if _too_sparse(lags, numeric, max_missing):
                    out.dropped["too_many_missing"] += 1
                    continue
                out.rows.append(SupervisedRow(entity, target.period, lags, target.risk_label))
    return out


@dataclass(frozen=True)
class Ineligible:
    entity_id: str
    reason: str


def build_scoring_rows(data: PanelDataset, window: int = DEFAULT_WINDOW,
                       max_missing: float = MAX_MISSING_FRACTION
                       ) -> tuple[list[SupervisedRow], list[Ineligible]]:
    """One unlabeled row per entity from its trailing ``window`` filings,
    targeting the period after its latest filing."""
    numeric = data.schema.numeric
    rows, skipped = [], []
    for entity, recs in data.by_entity().items():
        if len(recs) < window:
            skipped.append(Ineligible(entity, "insufficient history"))
            continue
        tail = recs[-window:]
        if tail[-1].period.value - tail[0].period.value != window - 1:
            skipped.append(Ineligible(entity, "gap in trailing periods"))
            continue
        lags = tuple(r.values for r in tail)
        if _too_sparse(lags, numeric, max_missing):
            skipped.append(Ineligible(entity, "too many missing values"))
            continue
        rows.append(SupervisedRow(entity, tail[-1].period.successor(), lags, None))
    return rows, skipped


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

def _format_cell(spec_kind: str, value) -> str:
    if _is_missing(value):
        return ""
    if spec_kind == "continuous":
        return repr(float(value))
    return str(value)


def write_panel_csv(data: PanelDataset, path: str | Path) -> None:
    schema = data.schema
    cols = [c for c in schema.columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow([c.name for c in cols])
        for rec in sorted(data.records, key=lambda r: (r.entity_id, r.period.value)):
            line = []
            for c in cols:
                if c.kind == "identifier":
                    line.append(rec.entity_id)
                elif c.kind == "period":
                    line.append(str(rec.period))
                elif c.kind == "target":
                    line.append("" if rec.risk_label is None else str(rec.risk_label))
                else:
                    line.append(_format_cell(c.kind, rec.values.get(c.name)))
            writer.writerow(line)


def _parse_cell(spec: ColumnSpec, text: str, lineno: int):
    if text == "":
        return None
    try:
        if spec.kind == "continuous":
            return float(text)
        if spec.kind == "count":
            v = float(text)
            if not v.is_integer():
                raise ValueError(f"non-integer count {text!r}")
            return int(v)
    except ValueError as exc:
        raise ParseError(f"line {lineno}, column {spec.name!r}: {exc}") from exc
    return text


def read_panel_csv(path: str | Path, schema: ColumnSchema | None = None) -> PanelDataset:
    """Read a panel CSV. Unknown header columns are an error; absent feature
    columns are treated as missing."""
    schema = schema or default_schema()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"panel file not found: {path}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        unknown = [h for h in header if h not in schema]
        if unknown:
            raise DataError(f"{path}: columns not in schema: {unknown}")
        for req in (schema.identifier, schema.period):
            if req not in header:
                raise DataError(f"{path}: required column {req!r} missing from header")
        specs = [schema[h] for h in header]
        for lineno, line in enumerate(reader, start=2):
            if len(line) != len(header):
                raise ParseError(f"{path}: line {lineno} has {len(line)} cells, expected {len(header)}")
            values = {}
            entity = period = label = None
            for spec, cell in zip(specs, line):
                if spec.kind == "identifier":
                    entity = cell
                elif spec.kind == "period":
                    try:
                        period = parse_period(cell)
                    except ParseError as exc:
                        raise ParseError(f"{path}: line {lineno}: {exc}") from exc
                elif spec.kind == "target":
                    if cell != "":
                        try:
                            label = int(cell)
                        except ValueError:
                            raise ParseError(f"{path}: line {lineno}: bad risk label {cell!r}") from None
                else:
                    values[spec.name] = _parse_cell(spec, cell, lineno)
            records.append(EntityPeriodRecord(entity, period, values, label))
    return PanelDataset(schema, records)
