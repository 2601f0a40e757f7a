"""End-to-end experiment: windows, features, split, fit, rebalance, learn, report.

Everything downstream of the split is fitted on training rows only; the test
rows are encoded with the training specs and never resampled.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .balance import RebalancePolicy, class_histogram, rebalance
from .domain import (CLASSES, DEFAULT_WINDOW, PanelDataset, SupervisedRow, build_lag_windows)
from .errors import ConfigError, DataError, SeeRiskError, StageError
from .evaluate import MetricsReport, SplitSpec, confusion_matrix, metrics, stratified_split
from .learn import (DecisionTree, ForestParams, LogisticModel, LogisticParams, RandomForestModel,
                    SearchSpace, fit_forest, fit_logistic, random_grid_search)
from .preprocess import (FeatureMatrix, FeatureSetConfig, MacroTable, Preprocessor,
                         fit_preprocessor, materialize, onehot_groups, prepare_rows)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
LEARNERS = ("forest", "logistic")
SEARCH_FRACTION = 0.7


def derive_seed(master: int, tag: str) -> int:
    """Stable 63-bit component seed from the master seed and a component tag."""
    digest = hashlib.sha256(f"{int(master)}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass(frozen=True)
class ExperimentConfig:
    features: FeatureSetConfig = field(default_factory=FeatureSetConfig)
    rebalance: RebalancePolicy | None = field(default_factory=RebalancePolicy)
    learner: str = "forest"
    params: Mapping[str, Any] = field(default_factory=dict)
    search: SearchSpace | None = None
    split: SplitSpec = field(default_factory=SplitSpec)
    seed: int = 0
    window: int = DEFAULT_WINDOW
    n_jobs: int = 1

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ConfigError(f"learner must be one of {LEARNERS}, got {self.learner!r}")
        self.learner_params({})  # validates params early

    def learner_params(self, overrides: Mapping[str, Any]):
        merged = {**self.params, **overrides}
        if self.learner == "forest":
            merged.setdefault("seed", derive_seed(self.seed, "forest"))
            return ForestParams.from_json(merged)
        return LogisticParams.from_json(merged)

    def to_json(self) -> dict:
        """Resolved configuration; ``n_jobs`` is left out because it never
        changes results."""
        return {
            "features": self.features.to_json(),
            "rebalance": None if self.rebalance is None else self.rebalance.to_json(),
            "learner": self.learner,
            "params": self.learner_params({}).to_json(),
            "search": None if self.search is None else self.search.to_json(),
            "split": self.split.to_json(),
            "seed": self.seed,
            "window": self.window,
        }

    @property
    def hash(self) -> str:
        return config_hash(self.to_json())

    @classmethod
    def from_json(cls, obj: Mapping, seed: int | None = None) -> "ExperimentConfig":
        """Build from JSON; component seeds not given explicitly derive from
        the master ``seed`` (argument, else ``obj["seed"]``, else 0)."""
        known = {"features", "rebalance", "learner", "params", "search", "split", "seed",
                 "window", "n_jobs"}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        master = int(obj.get("seed", 0) if seed is None else seed)
        split = dict(obj.get("split") or {})
        split.setdefault("seed", derive_seed(master, "split"))
        reb = obj.get("rebalance", {})
        if reb is not None:
            reb = dict(reb)
            reb.setdefault("seed", derive_seed(master, "rebalance"))
        search = obj.get("search")
        if search is not None:
            search = dict(search)
            search.setdefault("seed", derive_seed(master, "search"))
        params = dict(obj.get("params") or {})
        learner = obj.get("learner", "forest")
        if learner == "forest":
            params.setdefault("seed", derive_seed(master, "forest"))
        return cls(
            features=FeatureSetConfig.from_json(obj.get("features") or {}),
            rebalance=None if reb is None else RebalancePolicy.from_json(reb),
            learner=learner,
            params=params,
            search=None if search is None else SearchSpace.from_json(search),
            split=SplitSpec.from_json(split),
            seed=master,
            window=int(obj.get("window", DEFAULT_WINDOW)),
            n_jobs=int(obj.get("n_jobs", 1)),
        )


# --------------------------------------------------------------------------
# Fitted model: preprocessing + estimator
# --------------------------------------------------------------------------

@dataclass
class RiskModel:
    preprocessor: Preprocessor
    estimator: RandomForestModel | LogisticModel
    learner: str
    metadata: dict = field(default_factory=dict)

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(self.estimator.classes)

    @property
    def variant(self) -> str:
        return self.preprocessor.config.variant

    def features(self, rows: Sequence[SupervisedRow], macro: MacroTable | None = None
                 ) -> FeatureMatrix:
        cfg = self.preprocessor.config
        prepared = prepare_rows(rows, self.preprocessor.schema, cfg, macro)
        return materialize(prepared, cfg, self.preprocessor)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.estimator.predict_proba(X)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.estimator.predict(X)

    def to_json(self) -> dict:
        est = self.estimator
        if self.learner == "forest":
            body = {"params": est.params.to_json(), "trees": [t.to_json() for t in est.trees],
                    "oob_score": est.oob_score}
        else:
            body = {"params": est.params.to_json(), "weights": est.weights.tolist(),
                    "bias": est.bias.tolist(), "loss_history": est.loss_history}
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.learner,
            "classes": list(self.classes),
            "n_features": int(est.n_features),
            "preprocessor": self.preprocessor.to_json(),
            "estimator": body,
            "metadata": self.metadata,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "RiskModel":
        if obj.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported model format_version {obj.get('format_version')!r}")
        kind = obj.get("kind")
        classes = tuple(obj["classes"])
        pre = Preprocessor.from_json(obj["preprocessor"])
        body = obj["estimator"]
        if kind == "forest":
            params = ForestParams.from_json(body["params"])
            trees = [DecisionTree.from_json(t, obj["n_features"], classes) for t in body["trees"]]
            est = RandomForestModel(trees, params, obj["n_features"], classes,
                                    [c.name for c in pre.manifest], body.get("oob_score"))
        elif kind == "logistic":
            est = LogisticModel(np.asarray(body["weights"], dtype=np.float64),
                                np.asarray(body["bias"], dtype=np.float64),
                                LogisticParams.from_json(body["params"]), classes,
                                list(body.get("loss_history", [])))
        else:
            raise ConfigError(f"unknown model kind {kind!r}")
        return cls(pre, est, kind, dict(obj.get("metadata", {})))


def save_model(model: RiskModel, path: str | Path) -> None:
    Path(path).write_text(canonical_json(model.to_json()) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> RiskModel:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {p} is not valid JSON: {exc}") from None
    return RiskModel.from_json(obj)


# --------------------------------------------------------------------------
# Training and evaluation
# --------------------------------------------------------------------------

@dataclass
class PipelineResult:
    report: MetricsReport
    model: RiskModel
    artifacts: dict

    def report_json(self) -> dict:
        return {**self.report.to_json(), **self.artifacts}


class _Stage:
    """Re-raise anything from inside the block as a StageError tagged with ``name``."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (SeeRiskError, ValueError)):
            raise StageError(self.name, exc) from exc
        return False


def _fit_estimator(config: ExperimentConfig, X, y, params, feature_names=None):
    if config.learner == "forest":
        return fit_forest(X, y, params, n_jobs=config.n_jobs, classes=CLASSES,
                          feature_names=feature_names)
    return fit_logistic(X, y, params, CLASSES)


def _resample(config: ExperimentConfig, fm_X, fm_y, groups, seed_tag: str | None = None):
    if config.rebalance is None:
        return fm_X, fm_y, None
    policy = config.rebalance
    if seed_tag is not None:
        policy = replace(policy, seed=derive_seed(policy.seed, seed_tag))
    res = rebalance(fm_X, fm_y, policy, groups, CLASSES)
    return res.X, res.y, res


def _search(config: ExperimentConfig, train: FeatureMatrix, groups):
    """Random search scored on an inner stratified validation split."""
    inner = SplitSpec(SEARCH_FRACTION, derive_seed(config.seed, "search-split"), True)
    tr, va = stratified_split(train.y, inner)

    def objective(trial: dict) -> float:
        params = config.learner_params(trial)
        X, y, _ = _resample(config, train.X[tr], train.y[tr], groups, "search")
        est = _fit_estimator(config, X, y, params)
        return float(np.mean(est.predict(train.X[va]) == train.y[va]))

    return random_grid_search(config.search, objective)


def train_model(rows: Sequence[SupervisedRow], schema, config: ExperimentConfig,
                macro: MacroTable | None = None, split: bool = True
                ) -> tuple[RiskModel, dict, tuple[list[SupervisedRow], list[SupervisedRow]]]:
    """Fit preprocessing and the learner on the training part of ``rows``.

    Returns the model, the training artifacts and the (train, test) rows.
    With ``split=False`` every row trains and the test part is empty.
    """
    artifacts: dict[str, Any] = {}
    with _Stage("features"):
        rows = prepare_rows(rows, schema, config.features, macro)
    with _Stage("split"):
        if split:
            tr_idx, te_idx = stratified_split([r.target for r in rows], config.split)
        else:
            tr_idx, te_idx = np.arange(len(rows)), np.arange(0)
        train_rows = [rows[i] for i in tr_idx]
        test_rows = [rows[i] for i in te_idx]
        artifacts["split"] = {"train": len(train_rows), "test": len(test_rows)}
    with _Stage("fit_preprocess"):
        pre = fit_preprocessor(train_rows, schema, config.features)
    with _Stage("materialize"):
        train = materialize(train_rows, config.features, pre)
        artifacts["features"] = train.counters
    groups = onehot_groups(pre.manifest)
    with _Stage("rebalance"):
        X, y, res = _resample(config, train.X, train.y, groups)
        artifacts["train_histogram"] = {str(k): v for k, v in class_histogram(train.y).items()}
        artifacts["rebalanced_histogram"] = (
            None if res is None else {str(k): v for k, v in res.after.items()})
        artifacts["synthetic_rows"] = 0 if res is None else res.n_synthetic
    best: dict = {}
    with _Stage("search"):
        if config.search is not None:
            result = _search(config, train, groups)
            best = dict(result.best_params)
            artifacts["search"] = {"best_params": best, "best_score": result.best_score,
                                   "trials": [t.to_json() for t in result.trials]}
    with _Stage("fit"):
        params = config.learner_params(best)
        est = _fit_estimator(config, X, y, params, [c.name for c in pre.manifest])
        artifacts["params"] = params.to_json()
    meta = {"seed": config.seed, "config_hash": config.hash, "config": config.to_json(),
            "variant": config.features.variant, "split": config.split.to_json()}
    return RiskModel(pre, est, config.learner, meta), artifacts, (train_rows, test_rows)


def score_rows(model: RiskModel, rows: Sequence[SupervisedRow]) -> MetricsReport:
    with _Stage("predict"):
        fm = materialize(rows, model.preprocessor.config, model.preprocessor)
        pred = model.predict(fm.X)
    with _Stage("report"):
        return metrics(confusion_matrix(fm.y, pred, CLASSES))


def evaluate_pipeline(data: PanelDataset, config: ExperimentConfig,
                      macro: MacroTable | None = None) -> PipelineResult:
    """Split, fit on train, score the untouched test rows."""
    with _Stage("windows"):
        windows = build_lag_windows(data, config.window)
        if not windows.rows:
            raise DataError("no supervised rows: no entity has enough consecutive periods")
    model, artifacts, (_, test_rows) = train_model(windows.rows, data.schema, config, macro)
    report = score_rows(model, test_rows)
    artifacts["test_histogram"] = {str(k): v for k, v in
                                   class_histogram(np.array([r.target for r in test_rows])).items()}
    artifacts["dropped_rows"] = dict(sorted(windows.dropped.items()))
    artifacts["config"] = config.to_json()
    artifacts["config_hash"] = config.hash
    artifacts["seed"] = config.seed
    return PipelineResult(report, model, artifacts)


def column_importances(model: RiskModel) -> list[tuple[str, float]]:
    """Forest impurity importances per pre-encoding column, highest first.

    The dummy columns of one categorical at one lag are summed back into a
    single ``column@t-k`` entry; numeric columns pass through. Ties keep
    manifest order.
    """
    if model.learner != "forest":
        raise ConfigError("impurity importances need a forest model")
    imp = model.estimator.feature_importances
    totals: dict[str, float] = {}
    for info, v in zip(model.preprocessor.manifest, imp):
        key = f"{info.source}@{info.lag}" if info.transform == "onehot" else info.name
        totals[key] = totals.get(key, 0.0) + float(v)
    return sorted(totals.items(), key=lambda kv: -kv[1])
