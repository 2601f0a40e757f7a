import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from seerisk.errors import ConfigError, DataError, FitError
from seerisk.learn import DecisionTree, TreeParams, best_split, fit_tree, gini

TOL = 1e-9


def oracle_split(X, y, columns):
    """Exhaustive (column, midpoint) enumeration; ties to lower column then threshold."""
    labels = sorted(set(y.tolist()))
    counts = lambda mask: [int(np.sum(y[mask] == c)) for c in labels]  # noqa: E731
    parent = gini(counts(np.ones(len(y), bool)))
    found = []
    for j in sorted(set(columns)):
        vals = np.unique(X[:, j])
        for a, b in zip(vals[:-1], vals[1:]):
            t = 0.5 * (a + b)
            if t >= b:  # adjacent floats: the midpoint rounds up onto b
                t = a
            left = X[:, j] <= t
            nl, nr = left.sum(), (~left).sum()
            child = (nl * gini(counts(left)) + nr * gini(counts(~left))) / len(y)
            found.append((parent - child, j, t))
    if not found:
        return None
    top = max(g for g, _, _ in found)
    if top <= TOL:
        return None
    return min(((j, t, g) for g, j, t in found if g >= top - TOL))


# ---------------------------------------------------------------- gini

def test_gini_examples():
    assert gini([10, 0, 0, 0, 0]) == 0
    assert gini([2, 2, 2, 2, 2]) == pytest.approx(0.8)
    assert gini([3, 1, 0, 0, 0]) == pytest.approx(0.375)
    with pytest.raises(DataError):
        gini([0, 0, 0])


@given(st.lists(st.integers(0, 50), min_size=5, max_size=5).filter(lambda c: sum(c) > 0))
def test_gini_bounds(counts):
    g = gini(counts)
    assert 0 <= g <= 1 - 1 / 5 + 1e-12
    assert (g == 0) == (sum(c > 0 for c in counts) == 1)


# ---------------------------------------------------------------- best split

def test_best_split_example():
    X = np.array([[1.0], [2.0], [9.0], [10.0]])
    s = best_split(X, np.array([1, 1, 2, 2]), [0])
    assert (s.column, s.threshold) == (0, 5.5)
    assert s.gain == pytest.approx(0.5)  # parent gini 0.5, pure children


def test_best_split_none_when_pure_or_constant():
    X = np.arange(8.0).reshape(4, 2)
    assert best_split(X, np.array([3, 3, 3, 3]), [0, 1]) is None
    assert best_split(np.ones((4, 2)), np.array([1, 2, 1, 2]), [0, 1]) is None


def test_best_split_tie_goes_to_lower_column():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])
    s = best_split(X, np.array([1, 2]), [1, 0])
    assert (s.column, s.threshold) == (0, 0.5)


def test_best_split_matches_oracle_100_seeds():
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, d = rng.integers(2, 21), rng.integers(1, 5)
        X = rng.integers(0, 6, (n, d)).astype(float) if seed % 2 else rng.normal(size=(n, d))
        y = rng.integers(1, 4, n)
        cols = sorted(rng.choice(d, rng.integers(1, d + 1), replace=False).tolist())
        got = best_split(X, y, cols)
        want = oracle_split(X, y, cols)
        if want is None:
            mismatches += got is not None
        else:
            mismatches += got is None or (got.column, got.threshold) != want[:2] \
                or abs(got.gain - want[2]) > 1e-12
    assert mismatches == 0


# ---------------------------------------------------------------- fit_tree

def _accuracy(tree, X, y):
    return float(np.mean(tree.predict(X) == y))


def test_memorizes_consistent_data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 5))
    y = rng.integers(1, 6, 200)
    tree = fit_tree(X, y, TreeParams(features_per_split=None), rng=1)
    assert _accuracy(tree, X, y) == 1.0


def test_depth_zero_is_majority_leaf():
    X = np.arange(10.0)[:, None]
    y = np.array([1, 3, 3, 3, 2, 2, 3, 1, 5, 5])
    tree = fit_tree(X, y, TreeParams(max_depth=0))
    assert tree.n_nodes == 1
    assert (tree.predict(X) == 3).all()


def test_pure_xor_has_no_positive_gain_split():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    assert best_split(X, np.array([1, 2, 2, 1]), [0, 1]) is None


def test_xor_style_needs_depth_two():
    # label = 1 + x0 + x1: the XOR cells share a label, the corners differ,
    # so the root split has a small positive gain and each child needs one more
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([1, 2, 2, 3])
    tree = fit_tree(X, y, TreeParams(features_per_split=None))
    assert _accuracy(tree, X, y) == 1.0
    assert tree.depth == 2
    stump = fit_tree(X, y, TreeParams(max_depth=1, features_per_split=None))
    assert _accuracy(stump, X, y) < 1.0


def test_leaf_sizes_and_routing():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 4))
    y = rng.integers(1, 6, 300)
    params = TreeParams(min_samples_split=10, min_samples_leaf=5, features_per_split=2)
    tree = fit_tree(X, y, params, rng=4)
    leaves = tree.feature == -1
    assert (tree.counts[leaves].sum(axis=1) >= 5).all()
    # counts stored at each leaf are exactly the training rows routed there
    routed = tree.apply(X)
    for node in np.flatnonzero(leaves):
        here = y[routed == node]
        assert tree.counts[node].tolist() == [int(np.sum(here == c)) for c in range(1, 6)]
    # internal nodes send x <= threshold left
    for x, leaf in zip(X, routed):
        node = 0
        while tree.feature[node] >= 0:
            go_left = x[tree.feature[node]] <= tree.threshold[node]
            node = tree.left[node] if go_left else tree.right[node]
        assert node == leaf


def test_tree_json_round_trip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(50, 3))
    y = rng.integers(1, 6, 50)
    tree = fit_tree(X, y, rng=2)
    back = DecisionTree.from_json(tree.to_json(), 3)
    assert np.array_equal(back.predict(X), tree.predict(X))


def test_fit_tree_errors():
    with pytest.raises(FitError):
        fit_tree(np.zeros((0, 2)), np.zeros(0, int))
    with pytest.raises(DataError):
        fit_tree(np.array([[np.nan]]), [1])
    with pytest.raises(DataError):
        fit_tree(np.ones((3, 1)), [1, 2, 9])
    with pytest.raises(ConfigError):
        TreeParams(min_samples_leaf=5, min_samples_split=2)
    with pytest.raises(ConfigError):
        TreeParams(features_per_split="log2")


@pytest.mark.parametrize("f, d, m", [("sqrt", 330, 18), (None, 7, 7), (40, 10, 10), (3, 10, 3)])
def test_candidate_count(f, d, m):
    assert TreeParams(features_per_split=f).n_candidates(d) == m


def test_sample_weights_equal_duplication():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(40, 3))
    y = rng.integers(1, 4, 40)
    w = rng.integers(0, 3, 40)
    params = TreeParams(features_per_split=None)
    weighted = fit_tree(X, y, params, sample_weight=w)
    dup = fit_tree(np.repeat(X, w, axis=0), np.repeat(y, w), params)
    grid = np.array(list(itertools.product(*[np.linspace(-3, 3, 9)] * 3)))
    assert np.array_equal(weighted.predict(grid), dup.predict(grid))
