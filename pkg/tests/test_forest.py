import numpy as np
import pytest

from seerisk.errors import ConfigError, DataError, FitError
from seerisk.learn import (DecisionTree, ForestParams, RandomForestModel, TreeParams, fit_forest,
                           fit_tree, predict)
from seerisk.pipeline import canonical_json


def stub(cls, n_features=2):
    """Single-leaf tree that always votes ``cls``."""
    counts = np.zeros((1, 5))
    counts[0, cls - 1] = 1
    return DecisionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                        counts, np.zeros(n_features))


def stub_forest(*votes):
    return RandomForestModel([stub(v) for v in votes], ForestParams(len(votes)), 2)


def _json(model):
    return canonical_json([t.to_json() for t in model.trees])


def _blobs(n, seed, gap=3.0):
    rng = np.random.default_rng(seed)
    y = rng.integers(1, 3, n)
    X = rng.normal(size=(n, 4))
    X[:, 0] += gap * (y - 1.5)
    return X, y


def test_stub_votes_majority():
    cls, frac = predict(stub_forest(2, 2, 3), np.zeros(2))
    assert cls == 2
    assert frac.tolist() == pytest.approx([0, 2 / 3, 1 / 3, 0, 0])
    assert frac.sum() == pytest.approx(1.0)


def test_stub_votes_tie_goes_low():
    assert predict(stub_forest(3, 2), np.zeros(2))[0] == 2
    assert stub_forest(5, 4).predict(np.zeros((3, 2))).tolist() == [4, 4, 4]


def test_single_tree_forest_is_the_tree():
    X, y = _blobs(120, 0, gap=1.0)
    params = ForestParams(1, TreeParams(features_per_split=None), bootstrap=False, seed=3)
    forest = fit_forest(X, y, params)
    tree = fit_tree(X, y, TreeParams(features_per_split=None), rng=9)
    probe = np.random.default_rng(1).normal(size=(300, 4))
    assert np.array_equal(forest.predict(probe), tree.predict(probe))
    leaf = forest.trees[0].counts[forest.trees[0].apply(probe)].argmax(axis=1) + 1
    assert np.array_equal(forest.predict(probe), leaf)


def test_same_seed_same_model_any_threads():
    X, y = _blobs(300, 1, gap=0.5)
    params = ForestParams(24, TreeParams(max_depth=6), seed=42)
    a = fit_forest(X, y, params)
    b = fit_forest(X, y, params)
    c = fit_forest(X, y, params, n_jobs=4)
    assert _json(a) == _json(b) == _json(c)
    d = fit_forest(X, y, ForestParams(24, TreeParams(max_depth=6), seed=43))
    assert _json(d) != _json(a)


def test_separable_cloud_oob():
    X, y = _blobs(500, 2, gap=6.0)
    model = fit_forest(X, y, ForestParams(200, seed=5), oob=True)
    assert model.oob_score >= 0.95


def test_more_trees_no_worse_on_average():
    # noisy two-class problem with an oblique boundary
    def data(n, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 6))
        y = np.where(X[:, 0] + X[:, 1] + 0.8 * rng.normal(size=n) > 0, 1, 2)
        return X, y

    one, many = [], []
    for seed in range(10):
        X, y = data(300, seed)
        Xt, yt = data(500, 100 + seed)
        for n_trees, out in ((1, one), (100, many)):
            m = fit_forest(X, y, ForestParams(n_trees, TreeParams(max_depth=8), seed=seed))
            out.append(np.mean(m.predict(Xt) == yt))
    assert np.mean(many) >= np.mean(one)


def test_importances_find_the_signal_column():
    X, y = _blobs(400, 3, gap=2.0)
    imp = fit_forest(X, y, ForestParams(50, seed=1)).feature_importances
    assert imp.argmax() == 0
    assert imp.sum() == pytest.approx(1.0)


def test_errors():
    model = stub_forest(1, 2)
    with pytest.raises(DataError, match="expects 2 columns"):
        model.predict_proba(np.zeros((1, 3)))
    with pytest.raises(FitError):
        fit_forest(np.zeros((1, 2)), [1])
    with pytest.raises(ConfigError):
        ForestParams(0)


def test_params_json_round_trip():
    p = ForestParams(7, TreeParams(max_depth=3, features_per_split=5), bootstrap=False, seed=11)
    assert ForestParams.from_json(p.to_json()) == p
    with pytest.raises(ConfigError, match="gamma"):
        ForestParams.from_json({"gamma": 0.1})
