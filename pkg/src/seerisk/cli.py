"""Command-line entry point: gen, prepare, train, evaluate, predict, rank, inspect.

Exit codes: 0 success, 2 configuration or input error, 3 data or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .domain import build_lag_windows, build_scoring_rows, load_schema, read_panel_csv, \
    write_panel_csv
from .errors import ConfigError, DataError, SeeRiskError, StageError
from .evaluate import render_table, stratified_split
from .pipeline import (FORMAT_VERSION, ExperimentConfig, RiskModel, canonical_json, load_model,
                       save_model, score_rows, train_model)
from .preprocess import fit_preprocessor, materialize, prepare_rows, read_macro_csv, \
    write_macro_csv
from .synthgen import CohortSpec, describe_cohort, generate_cohort, generate_macro

log = logging.getLogger("seerisk")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
# vote mass on these classes is the inspection-priority score
HIGH_RISK = (4, 5)


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    panel: Path | None = None
    macro: Path | None = None
    schema: Path | None = None
    model: Path | None = None
    report_dir: Path | None = None
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    @property
    def seed(self) -> int:
        return self.experiment.seed


def _resolve(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_run_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    """Read a run config; relative paths resolve against the config's directory."""
    if path is None:
        return RunConfig(experiment=ExperimentConfig.from_json({}, seed=seed))
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {p} is not valid JSON: {exc}") from None
    known = {"panel", "macro", "schema", "model", "report_dir", "experiment", "seed"}
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown config keys in {p}: {sorted(unknown)}")
    base = p.parent
    exp = dict(obj.get("experiment") or {})
    if "seed" in obj:
        exp.setdefault("seed", obj["seed"])
    return RunConfig(
        panel=_resolve(base, obj.get("panel")),
        macro=_resolve(base, obj.get("macro")),
        schema=_resolve(base, obj.get("schema")),
        model=_resolve(base, obj.get("model")),
        report_dir=_resolve(base, obj.get("report_dir")),
        experiment=ExperimentConfig.from_json(exp, seed=seed),
    )


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------

def _require(value, what: str):
    if value is None:
        raise ConfigError(f"missing input: {what}")
    return value


def _load_panel(cfg: RunConfig, override: str | None = None):
    path = Path(override) if override else _require(cfg.panel, "panel CSV (config 'panel' or --panel)")
    schema = load_schema(cfg.schema) if cfg.schema else None
    return read_panel_csv(path, schema)


def _load_macro(cfg: RunConfig, variant: str, override: str | None = None):
    path = Path(override) if override else cfg.macro
    if variant == "M3" and path is None:
        raise ConfigError("missing input: macro CSV (config 'macro' or --macro) is required for M3")
    return read_macro_csv(path) if path is not None else None


def _out_dir(args, cfg: RunConfig | None = None) -> Path | None:
    out = getattr(args, "out", None)
    if out:
        return Path(out)
    return cfg.report_dir if cfg else None


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj) + "\n", encoding="utf-8")


def _emit(args, obj, table: str | None = None) -> None:
    if getattr(args, "format", "json") == "table" and table is not None:
        sys.stdout.write(table)
    else:
        sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stamp(obj: dict, seed: int, cfg_hash: str) -> dict:
    return {"format_version": FORMAT_VERSION, "seed": seed, "config_hash": cfg_hash, **obj}


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_gen(args) -> int:
    p = Path(args.spec)
    if not p.is_file():
        raise ConfigError(f"cohort spec not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cohort spec {p} is not valid JSON: {exc}") from None
    if args.seed is not None:
        obj["seed"] = args.seed
    spec = CohortSpec.from_json(obj)
    out = _require(_out_dir(args), "--out directory")
    out.mkdir(parents=True, exist_ok=True)
    data = generate_cohort(spec)
    write_panel_csv(data, out / "panel.csv")
    write_macro_csv(generate_macro(spec.periods, spec.seed), out / "macro.csv")
    summary = describe_cohort(data).to_json()
    _emit(args, {"panel": str(out / "panel.csv"), "macro": str(out / "macro.csv"),
                 "seed": spec.seed, "summary": summary})
    return EXIT_OK


def cmd_prepare(args, cfg: RunConfig) -> int:
    """Lag windows and the encoded feature matrix over every labelled row."""
    data = _load_panel(cfg, args.panel)
    exp = cfg.experiment
    macro = _load_macro(cfg, exp.features.variant, args.macro)
    windows = build_lag_windows(data, exp.window)
    if not windows.rows:
        raise DataError("no supervised rows: no entity has enough consecutive periods")
    rows = prepare_rows(windows.rows, data.schema, exp.features, macro)
    pre = fit_preprocessor(rows, data.schema, exp.features)
    fm = materialize(rows, exp.features, pre)
    summary = _stamp({"rows": len(rows), "dropped": dict(sorted(windows.dropped.items())),
                      "counters": fm.counters, "variant": exp.features.variant},
                     exp.seed, exp.hash)
    out = _out_dir(args, cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "features.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["entity_id", "target_period", "target", *fm.names])
            for i in range(len(rows)):
                w.writerow([fm.entity_ids[i], str(fm.target_periods[i]), int(fm.y[i]),
                            *(repr(float(v)) for v in fm.X[i])])
        _write_json(out / "manifest.json", _stamp(
            {"manifest": [c.to_json() for c in fm.manifest]}, exp.seed, exp.hash))
        _write_json(out / "prepare_report.json", summary)
    _emit(args, summary)
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    data = _load_panel(cfg, args.panel)
    exp = cfg.experiment
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        exp = replace(exp, n_jobs=args.jobs)
    macro = _load_macro(cfg, exp.features.variant, args.macro)
    windows = build_lag_windows(data, exp.window)
    if not windows.rows:
        raise DataError("no supervised rows: no entity has enough consecutive periods")
    model, artifacts, _ = train_model(windows.rows, data.schema, exp, macro)
    report = _stamp({"config": exp.to_json(), "dropped_rows": dict(sorted(windows.dropped.items())),
                     **artifacts}, exp.seed, exp.hash)
    model_path = Path(args.model) if args.model else cfg.model
    out = _out_dir(args, cfg)
    if model_path is None:
        model_path = _require(out, "--out directory or model path") / "model.json"
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, model_path)
    if out is not None:
        _write_json(out / "train_report.json", report)
    _emit(args, report)
    return EXIT_OK


def _check_compatible(model: RiskModel, exp: ExperimentConfig) -> None:
    meta = model.metadata
    if model.variant != exp.features.variant:
        raise ConfigError(f"model was trained on {model.variant} features; "
                          f"config asks for {exp.features.variant}")
    if meta.get("split") != exp.split.to_json():
        raise ConfigError(f"model split {meta.get('split')} differs from config split "
                          f"{exp.split.to_json()}; the test rows would not match")
    if model.preprocessor.config != exp.features:
        raise ConfigError("model feature settings differ from the config's")


def cmd_evaluate(args, cfg: RunConfig) -> int:
    model = load_model(Path(args.model) if args.model else
                       _require(cfg.model, "model file (config 'model' or --model)"))
    exp = cfg.experiment
    _check_compatible(model, exp)
    data = _load_panel(cfg, args.panel)
    macro = _load_macro(cfg, exp.features.variant, args.macro)
    windows = build_lag_windows(data, exp.window)
    if not windows.rows:
        raise DataError("no supervised rows: no entity has enough consecutive periods")
    rows = prepare_rows(windows.rows, data.schema, exp.features, macro)
    _, te = stratified_split([r.target for r in rows], exp.split)
    report = score_rows(model, [rows[i] for i in te])
    body = _stamp({**report.to_json(), "config": exp.to_json(),
                   "model_config_hash": model.metadata.get("config_hash")},
                  exp.seed, exp.hash)
    out = _out_dir(args, cfg)
    if out is not None:
        _write_json(out / "report.json", body)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(render_table(report), encoding="utf-8")
    _emit(args, body, render_table(report))
    return EXIT_OK


def _score_entities(args, cfg: RunConfig):
    model = load_model(Path(args.model) if args.model else
                       _require(cfg.model, "model file (config 'model' or --model)"))
    data = _load_panel(cfg, args.panel)
    macro = _load_macro(cfg, model.variant, args.macro)
    rows, skipped = build_scoring_rows(data, model.preprocessor.window)
    if not rows:
        raise DataError(f"no eligible entities: all {len(skipped)} lack "
                        f"{model.preprocessor.window} trailing consecutive periods")
    fm = model.features(rows, macro)
    proba = model.predict_proba(fm.X)
    return model, rows, skipped, proba


def _prediction_rows(model, rows, proba) -> list[dict]:
    classes = list(model.classes)
    hi = [classes.index(c) for c in HIGH_RISK if c in classes]
    out = []
    for r, p in zip(rows, proba):
        out.append({"entity_id": r.entity_id, "target_period": str(r.target_period),
                    "predicted_class": int(classes[int(np.argmax(p))]),
                    "votes": [float(v) for v in p],
                    "high_risk_score": float(sum(p[i] for i in hi))})
    return out


def cmd_predict(args, cfg: RunConfig) -> int:
    model, rows, skipped, proba = _score_entities(args, cfg)
    preds = _prediction_rows(model, rows, proba)
    body = _stamp({"predictions": preds,
                   "ineligible": [{"entity_id": s.entity_id, "reason": s.reason} for s in skipped]},
                  model.metadata.get("seed"), model.metadata.get("config_hash"))
    out = _out_dir(args, cfg)
    if out is not None:
        _write_json(out / "predictions.json", body)
    lines = [f"{'entity_id':<12} {'period':<8} class  votes"]
    for p in preds:
        lines.append(f"{p['entity_id']:<12} {p['target_period']:<8} {p['predicted_class']:>5}  "
                     + " ".join(f"{v:.3f}" for v in p["votes"]))
    _emit(args, body, "\n".join(lines) + "\n")
    return EXIT_OK


def rank_entities(preds: Sequence[dict]) -> list[dict]:
    """Highest high-risk score first; ties by entity id ascending."""
    ranked = sorted(preds, key=lambda p: (-p["high_risk_score"], p["entity_id"]))
    return [{"rank": i + 1, **p} for i, p in enumerate(ranked)]


def cmd_rank(args, cfg: RunConfig) -> int:
    model, rows, skipped, proba = _score_entities(args, cfg)
    ranked = rank_entities(_prediction_rows(model, rows, proba))
    if args.top_k is not None:
        if args.top_k < 1:
            raise ConfigError(f"--top-k must be >= 1, got {args.top_k}")
        ranked = ranked[:args.top_k]
    body = _stamp({"ranking": ranked,
                   "ineligible": [{"entity_id": s.entity_id, "reason": s.reason} for s in skipped]},
                  model.metadata.get("seed"), model.metadata.get("config_hash"))
    out = _out_dir(args, cfg)
    if out is not None:
        _write_json(out / "ranking.json", body)
    lines = [f"{'rank':>5}  {'entity_id':<12} class  score"]
    for r in ranked:
        lines.append(f"{r['rank']:>5}  {r['entity_id']:<12} {r['predicted_class']:>5}  "
                     f"{r['high_risk_score']:.3f}")
    if skipped:
        lines.append("")
        lines.append("ineligible:")
        lines.extend(f"  {s.entity_id}: {s.reason}" for s in skipped)
    _emit(args, body, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_inspect(args, cfg: RunConfig) -> int:
    data = _load_panel(cfg, args.panel)
    s = describe_cohort(data)
    body = s.to_json()
    lines = [f"records: {s.n_records}  entities: {s.n_entities}  periods: "
             f"{s.periods[0] + '..' + s.periods[-1] if s.periods else '-'}",
             "class histogram: " + "  ".join(f"{c}:{n}" for c, n in s.class_histogram.items())
             + f"  unlabeled:{s.unlabeled}",
             "entities filing four consecutive periods:"]
    lines.extend(f"  {w['start']} .. {w['end']}: {w['entities']}" for w in s.windows)
    worst = sorted(s.missing_rates.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
    lines.append("highest missing rates: " + ", ".join(f"{c} {r:.3f}" for c, r in worst))
    _emit(args, body, "\n".join(lines) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="run config JSON")
    p.add_argument("--seed", type=int, default=S, help="master seed (overrides the config)")
    p.add_argument("--out", default=S, help="output directory")
    p.add_argument("--format", choices=("json", "table"), default=S, help="stdout format")
    p.add_argument("-v", "--verbose", action="store_true", default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="seerisk", parents=[common],
                                     description="Next-period risk-class forecasting toolkit.")
    parser.add_argument("--version", action="version", version=f"seerisk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic cohort")
    g.add_argument("spec", help="cohort spec JSON")

    def data_args(p, model=False):
        p.add_argument("--panel", help="panel CSV (overrides the config)")
        p.add_argument("--macro", help="macro CSV (overrides the config)")
        if model:
            p.add_argument("--model", help="model file (overrides the config)")

    data_args(sub.add_parser("prepare", parents=[common], help="build the feature matrix"))
    t = sub.add_parser("train", parents=[common], help="fit and save a model")
    data_args(t, model=True)
    t.add_argument("--jobs", type=int, default=None,
                   help="training threads (results do not depend on it)")
    data_args(sub.add_parser("evaluate", parents=[common], help="score the held-out split"),
              model=True)
    data_args(sub.add_parser("predict", parents=[common], help="predict next-period classes"),
              model=True)
    r = sub.add_parser("rank", parents=[common], help="rank entities by high-risk score")
    data_args(r, model=True)
    r.add_argument("--top-k", type=int, default=None, help="keep only the first K entities")
    i = sub.add_parser("inspect", parents=[common], help="summarize a panel")
    i.add_argument("panel_path", nargs="?", help="panel CSV (overrides the config)")
    return parser


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "evaluate": cmd_evaluate,
            "predict": cmd_predict, "rank": cmd_rank, "inspect": cmd_inspect}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", None), ("format", "json"),
                          ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "inspect":
            args.panel = args.panel_path
        cfg = load_run_config(args.config, args.seed)
        return COMMANDS[args.command](args, cfg)
    except StageError as exc:
        code = EXIT_CONFIG if isinstance(exc.cause, ConfigError) else EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SeeRiskError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:
        # stdout closed early (e.g. piped into head); not an error of ours
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
