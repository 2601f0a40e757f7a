import numpy as np
import pytest

from seerisk.errors import ConfigError, FitError
from seerisk.learn import (Choice, ForestParams, IntRange, SearchSpace, TreeParams, fit_forest,
                           random_grid_search)


def test_single_point_space():
    calls = []
    space = SearchSpace({"max_depth": Choice((4,))}, n_trials=1, seed=0)
    res = random_grid_search(space, lambda p: calls.append(p) or 0.5)
    assert calls == [{"max_depth": 4}]
    assert res.best_params == {"max_depth": 4} and res.best_score == 0.5


def test_deep_structure_prefers_deep_trees():
    # checkerboard labels: a depth-1 tree cannot beat ~50%
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 4, size=(800, 2))
    y = ((np.floor(X[:, 0]) + np.floor(X[:, 1])) % 2 + 1).astype(int)
    tr, va = np.arange(600), np.arange(600, 800)

    def objective(p):
        params = ForestParams(10, TreeParams(max_depth=p["max_depth"], features_per_split=None),
                              seed=1)
        m = fit_forest(X[tr], y[tr], params)
        return float(np.mean(m.predict(X[va]) == y[va]))

    res = random_grid_search(SearchSpace({"max_depth": Choice((1, 20))}, n_trials=6, seed=2),
                             objective)
    assert {t.params["max_depth"] for t in res.trials} == {1, 20}
    assert res.best_params == {"max_depth": 20}
    assert res.best_score > 0.9


def test_same_seed_same_trials():
    space = SearchSpace({"n_trees": IntRange(10, 500), "max_depth": IntRange(2, 30),
                         "features_per_split": Choice((5, 10, "sqrt"))}, n_trials=8, seed=7)
    score = lambda p: -abs(p["max_depth"] - 10)  # noqa: E731
    a, b = random_grid_search(space, score), random_grid_search(space, score)
    assert [t.params for t in a.trials] == [t.params for t in b.trials]
    assert a.best_params == b.best_params
    reordered = SearchSpace(dict(reversed(list(space.ranges.items()))), 8, 7)
    assert [t.params for t in random_grid_search(reordered, score).trials] == \
        [t.params for t in a.trials]


def test_ties_go_to_earlier_trial():
    space = SearchSpace({"x": IntRange(0, 100)}, n_trials=5, seed=1)
    res = random_grid_search(space, lambda p: 1.0)
    assert res.best_params == res.trials[0].params


def test_failures_are_logged_and_skipped():
    space = SearchSpace({"x": IntRange(0, 9)}, n_trials=20, seed=3)

    def objective(p):
        if p["x"] % 2:
            raise ValueError("odd")
        return p["x"]

    res = random_grid_search(space, objective)
    failed = [t for t in res.trials if t.error]
    assert failed and all(t.score is None and "odd" in t.error for t in failed)
    assert res.best_params["x"] % 2 == 0
    with pytest.raises(FitError, match="all 20"):
        random_grid_search(space, lambda p: 1 / 0)


def test_space_json():
    obj = {"max_depth": {"min": 2, "max": 8}, "n_trees": [50, 100], "n_trials": 4, "seed": 9}
    space = SearchSpace.from_json(obj)
    assert space.to_json() == {"max_depth": {"min": 2, "max": 8}, "n_trees": [50, 100],
                               "n_trials": 4, "seed": 9}
    with pytest.raises(ConfigError):
        SearchSpace.from_json({"max_depth": {"min": 3, "max": 1}})
    with pytest.raises(ConfigError):
        SearchSpace.from_json({"max_depth": {"lo": 3}})
    with pytest.raises(ConfigError):
        SearchSpace({"x": Choice((1,))}, n_trials=0)
