import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seerisk.errors import ConfigError, DataError
from seerisk.evaluate import (ConfusionMatrix, MetricsReport, SplitSpec, allocate_train_counts,
                              confusion_matrix, integer_percents, metrics, render_table,
                              stratified_split)


def _labels(sizes):
    return np.concatenate([np.full(n, c) for c, n in sizes.items()])


# ---------------------------------------------------------------- split

def test_split_sizes_9383():
    sizes = {1: 19, 2: 4372, 3: 4860, 4: 10, 5: 122}
    assert sum(sizes.values()) == 9383
    tr, te = stratified_split(_labels(sizes), SplitSpec(0.7, seed=3))
    assert (len(tr), len(te)) == (6568, 2815)


def test_remainder_rule_by_hand():
    # 3.5 + 3.5: floors (3, 3), one leftover seat, tie goes to the lower class
    assert allocate_train_counts({1: 5, 2: 5}, 0.7) == {1: 4, 2: 3}
    assert allocate_train_counts({1: 100, 2: 10}, 0.7) == {1: 70, 2: 7}
    tr, _ = stratified_split(_labels({1: 5, 2: 5}), SplitSpec(0.7))
    y = _labels({1: 5, 2: 5})
    assert (np.sum(y[tr] == 1), np.sum(y[tr] == 2)) == (4, 3)


def test_split_errors_and_spec():
    with pytest.raises(DataError):
        stratified_split([1, 2], SplitSpec(0.3))
    with pytest.raises(ConfigError):
        SplitSpec(1.0)
    with pytest.raises(ConfigError):
        SplitSpec.from_json({"folds": 5})
    s = SplitSpec(0.6, 4, False)
    assert SplitSpec.from_json(s.to_json()) == s


@given(st.lists(st.integers(1, 5), min_size=2, max_size=300),
       st.floats(0.05, 0.95), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_split_partition_laws(y, fraction, seed, stratify):
    y = np.asarray(y)
    spec = SplitSpec(fraction, seed, stratify)
    n_train = math.floor(Fraction(repr(fraction)) * len(y))
    if n_train in (0, len(y)):
        with pytest.raises(DataError):
            stratified_split(y, spec)
        return
    tr, te = stratified_split(y, spec)
    assert len(tr) == n_train
    assert np.intersect1d(tr, te).size == 0
    assert np.array_equal(np.sort(np.concatenate([tr, te])), np.arange(len(y)))
    assert np.all(np.diff(tr) > 0) and np.all(np.diff(te) > 0)
    again = stratified_split(y, spec)
    assert np.array_equal(again[0], tr)
    if stratify:
        for c in np.unique(y):
            exact = Fraction(repr(fraction)) * int(np.sum(y == c))
            assert math.floor(exact) <= np.sum(y[tr] == c) <= math.floor(exact) + 1


# ---------------------------------------------------------------- confusion matrix

def test_confusion_examples():
    cm = confusion_matrix([1, 2, 3], [1, 2, 3])
    assert np.diag(cm.counts).tolist() == [1, 1, 1, 0, 0] and cm.n == 3
    cm = confusion_matrix([2, 2, 3], [2, 3, 3])
    assert (cm[2, 2], cm[2, 3], cm[3, 3]) == (1, 1, 1)
    assert cm.n == 3
    empty = confusion_matrix([], [])
    assert empty.n == 0 and empty.counts.shape == (5, 5)


def test_confusion_errors():
    with pytest.raises(DataError, match="index 2"):
        confusion_matrix([1, 2, 6], [1, 2, 3])
    with pytest.raises(DataError):
        confusion_matrix([1, 2], [1])


# ---------------------------------------------------------------- metrics

def test_metrics_hand_counts():
    r = metrics(confusion_matrix([2, 2, 3], [2, 3, 3]))
    assert r.precision[2] == pytest.approx(0.5)
    assert r.recall[1] == pytest.approx(0.5)
    assert r.accuracy == pytest.approx(2 / 3)
    assert r.precision[0] is None and r.recall[0] is None


def test_identity_metrics():
    r = metrics(confusion_matrix([1, 2, 3, 4, 5, 5], [1, 2, 3, 4, 5, 5]))
    assert r.precision == [1.0] * 5 and r.recall == [1.0] * 5 and r.accuracy == 1.0


def test_row_four_rendering():
    counts = np.zeros((5, 5), dtype=np.int64)
    counts[3] = [0, 0, 9, 2, 0]  # 81.8% and 18.2%
    counts[1, 1] = 5
    r = metrics(ConfusionMatrix(counts))
    assert r.row_pct_int[3] == [0, 0, 82, 18, 0]
    assert r.recall[3] == pytest.approx(2 / 11)
    row = render_table(r).splitlines()[4]
    assert row.split() == ["4", "82%", "18%"]


def test_metrics_need_rows():
    with pytest.raises(DataError):
        metrics(confusion_matrix([], []))


def test_report_json_round_trip():
    r = metrics(confusion_matrix([1, 2, 2, 3, 5], [1, 2, 3, 3, 3]))
    back = MetricsReport.from_json(r.to_json())
    assert back.to_json() == r.to_json()


def test_render_table_layout():
    r = metrics(confusion_matrix([1, 2, 2, 3], [1, 2, 3, 3]))
    lines = render_table(r).splitlines()
    assert lines[0].split() == ["actual\\pred", "1", "2", "3", "4", "5"]
    assert lines[2].split() == ["2", "50%", "50%"]
    assert lines[4].split() == ["4"]  # no support: blank row
    assert "overall accuracy: 75.00%" in render_table(r)


def test_integer_percents_sum_to_100():
    assert integer_percents([1, 1, 1]) == [34, 33, 33]
    assert integer_percents([0, 0]) is None


@st.composite
def matrices(draw):
    cells = draw(st.lists(st.integers(0, 40), min_size=25, max_size=25))
    return np.asarray(cells, dtype=np.int64).reshape(5, 5)


@given(matrices())
def test_metric_identities(counts):
    if counts.sum() == 0:
        return
    r = metrics(ConfusionMatrix(counts))
    recall_mass = sum(rc * s for rc, s in zip(r.recall, r.support) if rc is not None)
    assert r.accuracy == pytest.approx(recall_mass / r.n, abs=1e-12)
    assert r.support == counts.sum(axis=1).tolist()
    for row, pct in zip(r.row_pct_int, r.row_pct):
        if row is not None:
            assert abs(sum(row) - 100) <= 0.5
            assert abs(sum(pct) - 100) < 1e-9
