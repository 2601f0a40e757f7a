import numpy as np
import pytest

from seerisk.errors import FitError
from seerisk.learn import LogisticParams, fit_logistic, loss_and_grad, softmax


def _problem(seed, n=None, d=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 30))
    d = d or int(rng.integers(1, 6))
    X = rng.normal(size=(n, d))
    Y = np.eye(5)[rng.integers(0, 5, n)]
    W = rng.normal(size=(5, d))
    b = rng.normal(size=5)
    return X, Y, W, b, float(rng.uniform(0, 0.5))


def numeric_grad(f, P, eps=1e-5):
    G = np.zeros_like(P)
    for idx in np.ndindex(P.shape):
        old = P[idx]
        P[idx] = old + eps
        up = f()
        P[idx] = old - eps
        down = f()
        P[idx] = old
        G[idx] = (up - down) / (2 * eps)
    return G


def max_rel_error(seed):
    X, Y, W, b, l2 = _problem(seed)
    _, gW, gb = loss_and_grad(W, b, X, Y, l2)
    f = lambda: loss_and_grad(W, b, X, Y, l2)[0]  # noqa: E731
    nW, nb = numeric_grad(f, W), numeric_grad(f, b)
    num = np.concatenate([(gW - nW).ravel(), (gb - nb).ravel()])
    den = np.maximum(np.abs(np.concatenate([gW.ravel(), gb.ravel()]))
                     + np.abs(np.concatenate([nW.ravel(), nb.ravel()])), 1e-8)
    return float(np.max(np.abs(num) / den))


def test_gradient_matches_finite_differences():
    assert max(max_rel_error(s) for s in range(20)) < 1e-5


def test_zero_weights_uniform():
    X = np.random.default_rng(0).normal(size=(4, 3))
    model = fit_logistic(X, [1, 2, 3, 4], LogisticParams(epochs=0))
    assert np.allclose(model.predict_proba(X), 0.2)


def test_two_separable_points():
    X = np.array([[-1.0, 0.0], [1.0, 0.0]])
    model = fit_logistic(X, [1, 4], LogisticParams(learning_rate=0.5, epochs=200, l2=0))
    assert model.predict(X).tolist() == [1, 4]


def test_loss_monotone_at_small_rate():
    for seed in range(5):
        X, Y, *_ = _problem(seed, n=40, d=4)
        y = Y.argmax(axis=1) + 1
        hist = fit_logistic(X, y, LogisticParams(learning_rate=1e-3, epochs=300)).loss_history
        assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))


def test_softmax_rows_sum_to_one():
    Z = np.random.default_rng(3).normal(scale=50, size=(100, 5))
    assert np.allclose(softmax(Z).sum(axis=1), 1.0, atol=1e-9)


def test_divergence_reports_epoch():
    X = np.random.default_rng(1).normal(scale=1e150, size=(10, 3))
    with pytest.raises(FitError, match="epoch"):
        fit_logistic(X, [1, 2] * 5, LogisticParams(learning_rate=1e10, epochs=50))
