import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from implicit_auth.features import PHONE_LAYOUT, FeatureVector, device_layout
from implicit_auth.krr import (ACCEPT, REJECT, AuthModel, Standardizer, TrainingSet, classify, objective,
                               objective_gradient, score, solve_dual, solve_primal, train_baseline, train_dual,
                               train_primal)
from implicit_auth.sensors import ValidationError


def _separable(n=200, m=6, seed=0, gap=2.0):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    rows = rng.normal(size=(n, m)) + gap * y[:, None] * np.linspace(1, 0.2, m)
    return rows, y


def gradient_descent(X, y, rho, steps=20000):
    # plain fixed-step descent on rho|w|^2 + |X^T w - y|^2
    L = 2 * (rho + np.linalg.norm(X, 2) ** 2)
    w = np.zeros(X.shape[0])
    for _ in range(steps):
        w -= objective_gradient(X, y, w, rho) / L
    return w


@pytest.mark.parametrize("rho", [0.01, 1.0, 100.0])
def test_identity_design(rho):
    y = np.array([1.0, -1.0, 1.0, 1.0])
    for solver in (solve_primal, solve_dual):
        np.testing.assert_allclose(solver(np.eye(4), y, rho), y / (1 + rho), rtol=1e-12)


def test_regularisation_dominance():
    rng = np.random.default_rng(0)
    X, y = rng.uniform(-1, 1, (5, 20)), np.sign(rng.normal(size=20))
    w = solve_primal(X, y, 1e6)
    assert np.linalg.norm(w) <= np.linalg.norm(X @ y) / 1e6


def test_hand_instance_matches_gradient_descent():
    X = np.array([[1.0, 2.0, -1.0], [0.5, -1.0, 3.0]])  # M=2, N=3
    y = np.array([1.0, -1.0, 1.0])
    for rho in (0.1, 1.0, 10.0):
        ref = gradient_descent(X, y, rho)
        np.testing.assert_allclose(solve_primal(X, y, rho), ref, atol=1e-4)
        np.testing.assert_allclose(solve_dual(X, y, rho), ref, atol=1e-4)
        assert objective(X, y, solve_primal(X, y, rho), rho) <= objective(X, y, ref, rho) + 1e-10


def test_primal_dual_random_instances():
    rng = np.random.default_rng(1)
    for _ in range(100):
        m, n = rng.choice([5, 14, 28]), rng.choice([3, 28, 100])
        rho = rng.choice([0.01, 1.0, 100.0])
        X, y = rng.normal(size=(m, n)), np.sign(rng.normal(size=n))
        wp, wd = solve_primal(X, y, rho), solve_dual(X, y, rho)
        assert np.linalg.norm(wp - wd) <= 1e-8 * (1 + np.linalg.norm(wd))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 10), st.integers(1, 40), st.floats(1e-2, 1e2), st.integers(0, 10_000))
def test_stationarity_property(m, n, rho, seed):
    rng = np.random.default_rng(seed)
    X, y = rng.normal(size=(m, n)), np.sign(rng.normal(size=n))
    w = solve_primal(X, y, rho)
    assert np.linalg.norm(objective_gradient(X, y, w, rho)) <= 1e-6 * (1 + np.linalg.norm(X @ y))


def test_solver_input_errors():
    with pytest.raises(ValidationError):
        solve_primal(np.eye(2), np.ones(2), 0.0)
    with pytest.raises(ValidationError):
        solve_dual(np.array([[np.nan, 1.0]]), np.ones(2), 1.0)
    with pytest.raises(ValidationError):
        TrainingSet(np.ones((3, 4)), np.ones(5))


def test_train_requires_both_labels():
    with pytest.raises(ValidationError):
        train_primal(TrainingSet(np.ones((3, 4)), np.ones(4)))


def test_trained_model_margin_and_solvers_agree():
    rows, y = _separable()
    ts = TrainingSet.from_rows(rows, y)
    mp, md = train_primal(ts, 1.0), train_dual(ts, 1.0)
    np.testing.assert_allclose(mp.w, md.w, rtol=1e-8, atol=1e-10)
    cs = mp.scores(rows)
    assert cs[y > 0].mean() > cs[y < 0].mean()
    assert np.mean(np.sign(cs) == y) > 0.95


def test_standardizer():
    X = np.array([[1.0, 3.0], [5.0, 5.0]])
    s = Standardizer.fit(X)
    np.testing.assert_allclose(s.apply(X), [[-1, 1], [0, 0]])


def test_score_and_classify_examples():
    e1 = np.zeros(14)
    e1[0] = 1.0
    model = AuthModel(e1, 1.0, None, PHONE_LAYOUT, Standardizer.identity(14))
    x = np.zeros(14)
    x[0] = 2.0
    assert score(model, x) == 2.0
    orth = np.zeros(14)
    orth[3] = 5.0
    assert score(model, orth) == 0.0
    x[0] = 0.5
    assert classify(model, x) == ACCEPT
    assert classify(model, orth) == REJECT  # CS == 0 is a reject
    with pytest.raises(ValidationError):
        score(model, FeatureVector(np.zeros(14), device_layout("watch")))
    with pytest.raises(ValidationError):
        score(model, np.zeros(13))


def test_threshold_sweep_is_monotone():
    rows, y = _separable(gap=0.5, seed=3)
    cs = train_primal(TrainingSet.from_rows(rows, y)).scores(rows)
    fars, frrs = [], []
    for thr in np.linspace(cs.min() - 1, cs.max() + 1, 50):
        acc = cs > thr
        fars.append(np.mean(acc[y < 0]))
        frrs.append(np.mean(~acc[y > 0]))
    assert all(a >= b for a, b in zip(fars, fars[1:]))
    assert all(a <= b for a, b in zip(frrs, frrs[1:]))


def test_model_round_trip(tmp_path):
    rows, y = _separable(m=14)
    model = train_primal(TrainingSet.from_rows(rows, y), 1.0, "moving", PHONE_LAYOUT)
    model.save(tmp_path / "m.json")
    back = AuthModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.scores(rows), model.scores(rows))
    assert back.context == "moving" and back.layout == PHONE_LAYOUT
    assert back.train_meta["N"] == 200


def test_linear_regression_identity():
    y = np.array([1.0, -1.0, 1.0])
    model = train_baseline("linear_regression", TrainingSet(np.eye(3), y), standardize=False)
    np.testing.assert_allclose(model.w, y, atol=1e-12)


def test_naive_bayes_boundary_between_means():
    # equal variance and priors: boundary at the midpoint (2 + 6) / 2
    rng = np.random.default_rng(0)
    legit, imp = rng.normal(2, 1, 5000), rng.normal(6, 1, 5000)
    rows = np.concatenate([legit, imp])[:, None]
    y = np.concatenate([np.ones(5000), -np.ones(5000)])
    model = train_baseline("naive_bayes", TrainingSet.from_rows(rows, y))
    grid = np.linspace(0, 8, 8001)[:, None]
    boundary = grid[np.argmax(model.scores(grid) < 0), 0]
    assert 2 < boundary < 6
    assert boundary == pytest.approx(4.0, abs=0.1)


def test_naive_bayes_variance_floor_warns():
    rows = np.array([[1.0, 0.0], [1.0, 1.0], [2.0, 0.0], [2.0, 1.0]])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        train_baseline("naive_bayes", TrainingSet.from_rows(rows, [1, 1, -1, -1]))
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_unknown_baseline():
    with pytest.raises(ValidationError):
        train_baseline("svm", TrainingSet(np.eye(2), [1.0, -1.0]))
