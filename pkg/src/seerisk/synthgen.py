"""Synthetic SEE panels with a skewed risk profile and a planted signal.

Every distributional choice here (log-normal balances, Poisson counts, the
gap process, the latent score) is invented for testing; none of it describes
a real supervisor's data. Labels are assigned by ranking a latent score over
the records that can serve as prediction targets, so class counts hit the
requested proportions exactly.

Latent score at period ``t`` for entity ``e``::

    s = strength * (W_LEGAL * risky_legal(e) + W_PAST_DUE * z_growth(t-2 -> t-1)
                    + W_ENTITY * a_e) + N(0, 1)

``a_e`` is a hidden entity effect that the CAMELS-style rating columns echo
with noise, and ``z_growth`` is the standardized log growth of the past-due
portfolio, occasionally hit by large shocks that produce the rare top and
bottom classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import (CLASSES, DEFAULT_WINDOW, EntityPeriodRecord, PanelDataset, PeriodIndex,
                     _is_missing, consecutive_runs, default_schema, parse_period)
from .errors import ConfigError
from .preprocess import MacroTable

# risk shares of classes 1..5; they sum to 0.9873 and are renormalized
DEFAULT_PROPORTIONS = (0.002, 0.466, 0.518, 0.001, 0.0003)
RISKY_LEGAL = ("cooperative", "employee_fund")
LEGAL_SHARES = {"cooperative": 0.3, "employee_fund": 0.25, "other": 0.45}

W_LEGAL = 4.0
W_PAST_DUE = 2.0
W_ENTITY = 2.0
GROWTH_SD = 0.25
SHOCK_SIZE = (3.0, 4.0)
ECHO = 0.5
RISKY_SPIKE = 1.0
# how strongly a past-due shock carries into related balances and ratings
ECHO_BALANCES = {"net_client_portfolio": 0.25, "total_surplus": 1.0, "total_income": 0.3,
                 "total_equity": 0.25}
ECHO_RATINGS = {"credit_risk": 1.0, "consolidated_risk_rating": 0.5, "risk_rating": 0.5,
                "camel_rating": 0.5}

VOCAB = {
    "organization_type": ("association", "cooperative_org", "fund"),
    "company_type": ("financial", "non_financial"),
    "niif_group": ("g1", "g2", "g3"),
    "department": ("antioquia", "bogota", "cundinamarca", "santander", "valle"),
    "municipality": tuple(f"m{i:02d}" for i in range(8)),
    "category": ("a", "b", "c"),
    "supervision_level": ("1", "2", "3"),
}

# log-scale location of each balance relative to total assets
BALANCE_RATIOS = {
    "client_portfolio": -0.4, "net_client_portfolio": -0.5, "consumer_portfolio": -0.9,
    "housing_portfolio": -2.0, "commercial_portfolio": -2.3, "micro_portfolio": -2.5,
    "total_investments": -2.0, "agreement_receivables": -3.0, "total_liabilities": -0.6,
    "total_deposits": -0.9, "bank_account_deposits": -2.2, "cdt_deposits": -1.6,
    "contractual_deposits": -2.8, "permanent_savings_deposits": -2.0, "total_equity": -1.0,
    "social_contributions": -1.5, "total_surplus": -3.5, "total_income": -1.8,
    "total_expenses": -1.9, "gross_portfolio": -0.35, "total_capital": -1.1,
    "admin_expenses": -2.6,
}
COUNT_MEANS = {
    "n_associates": 40, "n_employees": 6, "n_offices": 1, "n_correspondents": 1,
    "n_savers": 25, "n_debtors": 18, "n_female_members": 20, "n_male_members": 18,
    "n_other_members": 1,
}
RATINGS = ("consolidated_risk_rating", "risk_rating", "camel_rating", "credit_risk",
           "liquidity_risk", "operational_risk", "sarassoft_risk")


@dataclass(frozen=True)
class CohortSpec:
    n_entities: int = 2500
    start: str = "2016-1"
    end: str = "2019-1"
    proportions: tuple[float, ...] = DEFAULT_PROPORTIONS
    gap_prob: float = 0.0
    signal: float = 1.0
    missing_rate: float = 0.01
    shock_prob: float = 0.0026
    seed: int = 0
    # optional per-period probability that an entity files at all
    filing_prob: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_entities < 1:
            raise ConfigError(f"n_entities must be >= 1, got {self.n_entities}")
        if len(self.proportions) != len(CLASSES):
            raise ConfigError(f"need {len(CLASSES)} class proportions, got {len(self.proportions)}")
        if any(p < 0 for p in self.proportions) or sum(self.proportions) <= 0:
            raise ConfigError("class proportions must be non-negative with a positive sum")
        for name in ("gap_prob", "missing_rate", "shock_prob"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ConfigError(f"{name} must be in [0, 1), got {v}")
        if self.signal < 0:
            raise ConfigError(f"signal strength must be >= 0, got {self.signal}")
        if self.n_periods < 1:
            raise ConfigError(f"empty period range {self.start}..{self.end}")
        if self.filing_prob is not None and len(self.filing_prob) != self.n_periods:
            raise ConfigError(f"filing_prob needs {self.n_periods} entries")

    @property
    def periods(self) -> list[PeriodIndex]:
        a, b = parse_period(self.start), parse_period(self.end)
        return [PeriodIndex(v) for v in range(a.value, b.value + 1)]

    @property
    def n_periods(self) -> int:
        return parse_period(self.end).value - parse_period(self.start).value + 1

    @property
    def shares(self) -> np.ndarray:
        p = np.asarray(self.proportions, dtype=np.float64)
        return p / p.sum()

    def to_json(self) -> dict:
        return {
            "n_entities": self.n_entities, "start": self.start, "end": self.end,
            "proportions": list(self.proportions), "gap_prob": self.gap_prob,
            "signal": self.signal, "missing_rate": self.missing_rate,
            "shock_prob": self.shock_prob, "seed": self.seed,
            "filing_prob": None if self.filing_prob is None else list(self.filing_prob),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "CohortSpec":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown cohort spec keys: {sorted(unknown)}")
        kw = dict(obj)
        if "proportions" in kw:
            kw["proportions"] = tuple(float(p) for p in kw["proportions"])
        if kw.get("filing_prob") is not None:
            kw["filing_prob"] = tuple(float(p) for p in kw["filing_prob"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"bad cohort spec: {exc}") from None


def allocate_counts(n: int, shares: Sequence[float], minimum: int = 0) -> list[int]:
    """Integer class counts summing to ``n``: floors, then largest remainder
    (ties to the lower class), then seats moved from the largest class so
    every class reaches ``minimum``."""
    exact = [n * s for s in shares]
    counts = [math.floor(x) for x in exact]
    order = sorted(range(len(shares)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        while counts[i] < minimum:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            if counts[donor] <= minimum:
                break
            counts[donor] -= 1
            counts[i] += 1
    return counts


@dataclass
class _Entity:
    legal: str
    effect: float
    cats: dict
    log_assets: np.ndarray
    log_pd_ratio: np.ndarray
    growth_z: np.ndarray
    shock: np.ndarray
    present: np.ndarray
    rows: list = field(default_factory=list)


def _simulate_entity(spec: CohortSpec, index: int) -> _Entity:
    """Full latent path of one entity; its draws depend only on (seed, index)."""
    rng = np.random.default_rng([spec.seed, index])
    T = spec.n_periods
    legal = str(rng.choice(list(LEGAL_SHARES), p=list(LEGAL_SHARES.values())))
    effect = float(rng.normal())
    cats = {c: str(rng.choice(v)) for c, v in VOCAB.items()}
    cats["legal_nature"] = legal
    log_assets = rng.normal(20.0, 1.5) + np.cumsum(rng.normal(0.02, 0.05, T))
    # past-due share of the gross portfolio follows a log random walk with rare shocks
    steps = rng.normal(0.0, GROWTH_SD, T)
    shocks = rng.random(T) < spec.shock_prob
    # risky legal forms mostly take past-due spikes, the rest mostly recoveries
    up = RISKY_SPIKE if legal in RISKY_LEGAL else 1.0 - RISKY_SPIKE
    signs = np.where(rng.random(T) < up, 1.0, -1.0)
    shock = shocks * signs * rng.uniform(*SHOCK_SIZE, T)
    shock[0] = 0.0
    steps = steps + shock
    steps[0] = 0.0
    log_pd_ratio = rng.normal(-3.0, 0.5) + np.cumsum(steps)
    present = rng.random(T) >= spec.gap_prob
    if spec.filing_prob is not None:
        present &= rng.random(T) < np.asarray(spec.filing_prob)
    ent = _Entity(legal, effect, cats, log_assets, log_pd_ratio, steps / GROWTH_SD, shock, present)
    for t in range(T):
        ent.rows.append(_record_values(rng, ent, t, spec.missing_rate))
    return ent


def _record_values(rng: np.random.Generator, ent: _Entity, t: int, missing_rate: float) -> dict:
    vals: dict = dict(ent.cats)
    assets = math.exp(ent.log_assets[t])
    vals["total_assets"] = assets
    for col, loc in BALANCE_RATIOS.items():
        vals[col] = assets * math.exp(loc + rng.normal(0.0, 0.15))
    # measured against the noise-free portfolio so its growth is the planted walk
    base = assets * math.exp(BALANCE_RATIOS["gross_portfolio"])
    vals["past_due_portfolio"] = base * math.exp(ent.log_pd_ratio[t])
    # a past-due shock also shows in provisions, losses and the credit rating
    hit = float(ent.shock[t])
    for col, k in ECHO_BALANCES.items():
        vals[col] *= math.exp(-ECHO * k * hit)
    for col, mean in COUNT_MEANS.items():
        vals[col] = int(rng.poisson(mean))
    vals["profitability"] = float(rng.normal(0.02, 0.03))
    vals["liquidity"] = float(rng.normal(0.15, 0.05))
    for col in RATINGS:
        vals[col] = float(np.clip(3.0 + ent.effect + rng.normal(0.0, 0.6), 1.0, 5.0))
    for col, k in ECHO_RATINGS.items():
        vals[col] = float(np.clip(vals[col] + ECHO * k * hit, 1.0, 5.0))
    for col, v in vals.items():
        if isinstance(v, float):
            vals[col] = round(v, 2) if abs(v) >= 1 else round(v, 6)
    mask = rng.random(len(vals)) < missing_rate
    for col, drop in zip(list(vals), mask):
        if drop and col != "legal_nature":
            vals[col] = None
    return vals


def _latent_scores(spec: CohortSpec, ents: Sequence[_Entity]) -> np.ndarray:
    T = spec.n_periods
    scores = np.empty((len(ents), T))
    for i, ent in enumerate(ents):
        noise = np.random.default_rng([spec.seed, i, 1]).normal(size=T)
        growth = np.zeros(T)
        growth[2:] = ent.growth_z[1:-1]  # growth from t-2 to t-1
        planted = (W_LEGAL * (ent.legal in RISKY_LEGAL) + W_PAST_DUE * growth
                   + W_ENTITY * ent.effect)
        scores[i] = spec.signal * planted + noise
    return scores


def generate_cohort(spec: CohortSpec = CohortSpec()) -> PanelDataset:
    """Deterministic synthetic panel over the default schema.

    Records with ``window`` consecutive predecessors are ranked by latent
    score and cut into classes 1..5 at exactly the allocated counts (at
    least 3 per class when there are enough rows, so a 70/30 split leaves
    two per class for interpolation). Other records reuse those cut points.
    """
    schema = default_schema()
    periods = spec.periods
    ents = [_simulate_entity(spec, i) for i in range(spec.n_entities)]
    scores = _latent_scores(spec, ents)
    width = len(str(spec.n_entities - 1))

    eligible = np.zeros_like(scores, dtype=bool)
    for i, ent in enumerate(ents):
        for run in consecutive_runs(np.flatnonzero(ent.present).tolist()):
            for t in run[DEFAULT_WINDOW:]:
                eligible[i, t] = True
    elig_scores = scores[eligible]
    # with no rankable record the cut points come from every record instead
    pool = elig_scores if len(elig_scores) else scores.ravel()
    n_pool = len(pool)
    counts = allocate_counts(n_pool, spec.shares, minimum=min(3, n_pool // len(CLASSES)))
    order = np.argsort(pool, kind="stable")
    bounds = np.cumsum(counts)
    ranked = pool[order]
    cuts = np.array([(ranked[b - 1] + ranked[b]) / 2 if 0 < b < n_pool
                     else (-np.inf if b == 0 else np.inf) for b in bounds[:-1]])
    labels = np.searchsorted(cuts, scores, side="right") + 1
    if len(elig_scores):
        # exact rank assignment, immune to ties at a cut point
        rank_labels = np.empty(n_pool, dtype=np.int64)
        start = 0
        for cls, stop in zip(CLASSES, bounds):
            rank_labels[order[start:stop]] = cls
            start = stop
        labels[eligible] = rank_labels
        counts_eligible = counts
    else:
        counts_eligible = [0] * len(CLASSES)

    records = []
    for i, ent in enumerate(ents):
        eid = f"SEE{i:0{width}d}"
        for t, p in enumerate(periods):
            if ent.present[t]:
                records.append(EntityPeriodRecord(eid, p, ent.rows[t], int(labels[i, t])))
    hist = {c: 0 for c in CLASSES}
    for r in records:
        hist[r.risk_label] += 1
    meta = {
        "spec": spec.to_json(),
        "label_counts": hist,
        "ranked_counts": dict(zip(CLASSES, counts_eligible)),
        "proportion_residual": round(1.0 - sum(spec.proportions), 10),
    }
    return PanelDataset(schema, records, meta)


def generate_macro(periods: Sequence[PeriodIndex], seed: int = 0) -> MacroTable:
    """Smooth synthetic CPI, unemployment and GDP-growth series."""
    rng = np.random.default_rng([seed, 7])
    n = len(periods)
    cpi = 3.5 + np.cumsum(rng.normal(0.0, 0.3, n))
    unemployment = 9.5 + np.cumsum(rng.normal(0.0, 0.25, n))
    gdp = 2.5 + np.cumsum(rng.normal(0.0, 0.4, n))
    values = {}
    for p, row in zip(periods, zip(cpi, unemployment, gdp)):
        values[p.value] = tuple(round(float(v), 4) for v in row)
    return MacroTable(values)


@dataclass
class CohortSummary:
    n_records: int
    n_entities: int
    periods: list[str]
    class_histogram: dict[int, int]
    unlabeled: int
    missing_rates: dict[str, float]
    windows: list[dict]

    def to_json(self) -> dict:
        return {
            "n_records": self.n_records, "n_entities": self.n_entities,
            "periods": self.periods,
            "class_histogram": {str(k): v for k, v in self.class_histogram.items()},
            "unlabeled": self.unlabeled, "missing_rates": self.missing_rates,
            "windows": self.windows,
        }


def describe_cohort(data: PanelDataset, span: int = DEFAULT_WINDOW + 1) -> CohortSummary:
    """Exact counts: labels, entities, periods, per-column missing rates and,
    for each run of ``span`` consecutive periods, how many entities filed
    in all of them."""
    hist = {c: 0 for c in CLASSES}
    unlabeled = 0
    for r in data.records:
        if r.risk_label is None:
            unlabeled += 1
        else:
            hist[r.risk_label] += 1
    features = [c.name for c in data.schema.feature_columns]
    missing = dict.fromkeys(features, 0)
    for r in data.records:
        for c in features:
            if _is_missing(r.values.get(c)):
                missing[c] += 1
    n = len(data.records)
    rates = {c: (missing[c] / n if n else 0.0) for c in features}
    present = {}
    for r in data.records:
        present.setdefault(r.entity_id, set()).add(r.period.value)
    values = sorted({r.period.value for r in data.records})
    windows = []
    if values:
        for first in range(values[0], values[-1] - span + 2):
            need = set(range(first, first + span))
            count = sum(need <= ps for ps in present.values())
            windows.append({"start": str(PeriodIndex(first)),
                            "end": str(PeriodIndex(first + span - 1)), "entities": count})
    return CohortSummary(n, len(present), [str(PeriodIndex(v)) for v in values], hist,
                         unlabeled, rates, windows)
