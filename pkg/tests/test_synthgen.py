import numpy as np
import pytest

from seerisk.domain import (PanelDataset, build_lag_windows, default_schema, validate_dataset,
                            write_panel_csv)
from seerisk.errors import ConfigError
from seerisk.pipeline import ExperimentConfig, evaluate_pipeline
from seerisk.synthgen import (DEFAULT_PROPORTIONS, RISKY_LEGAL, CohortSpec, allocate_counts,
                              describe_cohort, generate_cohort, generate_macro)


def test_same_spec_same_bytes(tmp_path):
    spec = CohortSpec(n_entities=40, gap_prob=0.1, seed=5)
    write_panel_csv(generate_cohort(spec), tmp_path / "a.csv")
    write_panel_csv(generate_cohort(spec), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    write_panel_csv(generate_cohort(CohortSpec(n_entities=40, gap_prob=0.1, seed=6)),
                    tmp_path / "c.csv")
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_gap_free_entities_give_four_rows():
    data = generate_cohort(CohortSpec(n_entities=50, start="2016-1", end="2019-1", seed=2))
    rows = build_lag_windows(data, 3)
    per_entity = {}
    for r in rows:
        per_entity[r.entity_id] = per_entity.get(r.entity_id, 0) + 1
    assert len(per_entity) == 50 and set(per_entity.values()) == {4}


def test_cohort_is_valid(small_cohort):
    data, macro = small_cohort
    assert validate_dataset(data) == []
    assert all(r.values["legal_nature"] is not None for r in data.records)
    periods = {r.period for r in data.records}
    assert all(p in macro for p in periods)


def test_class_shares_on_50k_rows():
    data = generate_cohort(CohortSpec(n_entities=7143, seed=1))
    assert len(data) == 50001
    hist = describe_cohort(data).class_histogram
    target = np.asarray(DEFAULT_PROPORTIONS) / sum(DEFAULT_PROPORTIONS)
    shares = np.asarray([hist[c] for c in range(1, 6)]) / len(data)
    assert np.all(np.abs(shares - target) <= 0.005)
    assert data.metadata["proportion_residual"] == pytest.approx(0.0127)


def test_rare_classes_always_present():
    for seed in range(5):
        data = generate_cohort(CohortSpec(n_entities=30, seed=seed))
        assert min(data.metadata["ranked_counts"].values()) >= 2


def test_describe_matches_generator_log(small_cohort):
    data, _ = small_cohort
    s = describe_cohort(data)
    assert s.class_histogram == data.metadata["label_counts"]
    assert s.n_records == len(data) and s.unlabeled == 0
    assert s.n_entities == 120
    assert s.periods[0] == "2016-1" and s.periods[-1] == "2019-1"


def test_describe_windows_brute_force():
    data = generate_cohort(CohortSpec(n_entities=200, gap_prob=0.2, seed=4))
    s = describe_cohort(data)
    present = {}
    for r in data.records:
        present.setdefault(r.entity_id, set()).add(r.period.value)
    assert len(s.windows) == 4
    for w, first in zip(s.windows, range(4032, 4036)):
        want = sum(all(first + k in ps for k in range(4)) for ps in present.values())
        assert w["entities"] == want
    assert sum(w["entities"] for w in s.windows) < 4 * 200


def test_describe_empty():
    s = describe_cohort(PanelDataset(default_schema(), []))
    assert (s.n_records, s.n_entities, s.unlabeled) == (0, 0, 0)
    assert set(s.class_histogram.values()) == {0}
    assert s.windows == [] and s.periods == []
    assert set(s.missing_rates.values()) == {0.0}


def test_degenerate_specs():
    with pytest.raises(ConfigError):
        CohortSpec(n_entities=0)
    with pytest.raises(ConfigError, match="empty period range"):
        CohortSpec(start="2019-1", end="2018-2")
    with pytest.raises(ConfigError):
        CohortSpec(proportions=(0, 0, 0, 0, 0))
    with pytest.raises(ConfigError):
        CohortSpec(gap_prob=1.0)
    with pytest.raises(ConfigError, match="unknown"):
        CohortSpec.from_json({"n_entities": 3, "n_firms": 4})


def test_spec_json_round_trip():
    spec = CohortSpec(n_entities=9, gap_prob=0.05, signal=0.5, seed=3,
                      filing_prob=(0.9,) * 7)
    assert CohortSpec.from_json(spec.to_json()) == spec


def test_allocate_counts():
    assert allocate_counts(10, [0.5, 0.5]) == [5, 5]
    assert allocate_counts(7, [0.5, 0.5]) == [4, 3]
    assert allocate_counts(100, [0.9, 0.1, 0.0], minimum=3) == [87, 10, 3]
    assert sum(allocate_counts(9383, np.asarray(DEFAULT_PROPORTIONS) / 0.9873)) == 9383


def test_macro_series():
    spec = CohortSpec(n_entities=1)
    m = generate_macro(spec.periods, 3)
    assert [p.value for p in m.periods] == [p.value for p in spec.periods]
    assert m == generate_macro(spec.periods, 3)
    assert m != generate_macro(spec.periods, 4)


def test_planted_legal_effect(small_cohort):
    data, _ = small_cohort
    rows = build_lag_windows(data)
    risky = [r.target for r in rows if r.lags[-1]["legal_nature"] in RISKY_LEGAL]
    other = [r.target for r in rows if r.lags[-1]["legal_nature"] not in RISKY_LEGAL]
    assert np.mean(risky) > np.mean(other)


@pytest.mark.slow
def test_null_signal_is_not_learnable():
    # held-out accuracy must not beat the majority share by more than 3 sigma
    accs, majority, n_test = [], [], 0
    for seed in range(10):
        spec = CohortSpec(n_entities=250, signal=0.0, seed=seed)
        data = generate_cohort(spec)
        cfg = ExperimentConfig.from_json({
            "features": {"variant": "M3"}, "rebalance": None,
            "params": {"n_trees": 50, "max_depth": 8}, "seed": seed})
        res = evaluate_pipeline(data, cfg, generate_macro(spec.periods, seed))
        accs.append(res.report.accuracy)
        majority.append(max(res.report.support) / res.report.n)
        n_test = res.report.n
    p = np.mean(majority)
    sigma = np.sqrt(p * (1 - p) / n_test) / np.sqrt(len(accs))
    assert np.mean(accs) - p <= 3 * sigma
