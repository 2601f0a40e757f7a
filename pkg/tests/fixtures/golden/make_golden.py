"""Regenerate the golden evaluate fixture: python make_golden.py (from this directory)."""

import json
from pathlib import Path

from seerisk.cli import main

HERE = Path(__file__).parent

(HERE / "cohort.json").write_text(json.dumps({"n_entities": 60, "seed": 21}) + "\n")
(HERE / "run.json").write_text(json.dumps({
    "panel": "panel.csv", "macro": "macro.csv", "model": "model.json", "seed": 21,
    "experiment": {"features": {"variant": "M3"},
                   "rebalance": {"allow_duplication_fallback": True},
                   "params": {"n_trees": 8, "max_depth": 4}},
}, indent=2) + "\n")
assert main(["gen", str(HERE / "cohort.json"), "--out", str(HERE)]) == 0
assert main(["train", "--config", str(HERE / "run.json")]) == 0
assert main(["evaluate", "--config", str(HERE / "run.json"), "--out", str(HERE / "expected")]) == 0
