import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airstack.ensemble import (ConvergenceWarning, EnsembleModel, SmoothComponent, component_matrix,
                               dumps_ensemble, fit_gam, loads_ensemble, place_knots, predict_gam,
                               spline_basis, spline_matrices)

from oracles import joint_penalized_fit, ols_fit


def instance(n=50, seed=7):
    rng = np.random.default_rng(seed)
    P = np.column_stack([rng.uniform(0, 1, n), rng.uniform(0, 1, n)])
    y = np.sin(4 * P[:, 0]) + 0.5 * P[:, 1] ** 2 + 0.1 * rng.normal(size=n)
    return P, y


def stacking_instance(n=300, m=3, seed=0):
    # strongly correlated columns, as base-model predictions are
    rng = np.random.default_rng(seed)
    truth = rng.normal(10, 2, n)
    y = truth + rng.normal(0, 0.5, n)
    P = np.column_stack([truth + rng.normal(0, 0.3 + 0.2 * j, n) for j in range(m)])
    P[:, -1] = np.tanh((P[:, -1] - 10) / 3) * 3 + 10
    return P, y


def rss(y, f):
    return float(np.sum((y - f) ** 2))


def test_identity_is_unpenalized():
    x = np.random.default_rng(0).normal(size=80)
    m = fit_gam(x[:, None], x)
    assert rss(x, predict_gam(m, x[:, None])) < 1e-10


def test_backfitting_matches_joint_solve():
    P, y = instance()
    m = fit_gam(P, y)
    assert m.converged
    np.testing.assert_allclose(predict_gam(m, P), joint_penalized_fit(P, y, m), atol=1e-6)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_joint_solve_on_correlated_inputs(seed):
    P, y = stacking_instance(seed=seed)
    m = fit_gam(P, y)
    assert m.converged and m.history[-1] < 1e-8
    np.testing.assert_allclose(predict_gam(m, P), joint_penalized_fit(P, y, m), atol=1e-6)


def test_irrelevant_component_small():
    rng = np.random.default_rng(21)
    n = 200
    P = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-2, 2, n)])
    y = P[:, 0] ** 3 - P[:, 0] + rng.normal(0, 0.2, n)
    m = fit_gam(P, y)
    comp2 = component_matrix(m, P)[:, 1]
    assert np.max(np.abs(comp2)) < 0.05 * np.std(y)
    np.testing.assert_allclose(predict_gam(m, P), joint_penalized_fit(P, y, m), atol=1e-6)


@pytest.mark.parametrize("maker,kw", [(instance, {}), (instance, {"seed": 3}),
                                      (stacking_instance, {}), (stacking_instance, {"m": 1})])
def test_rss_not_worse_than_ols_and_centered(maker, kw):
    P, y = maker(**kw)
    m = fit_gam(P, y)
    assert rss(y, predict_gam(m, P)) <= rss(y, ols_fit(P, y)) + 1e-8
    assert np.all(np.abs(component_matrix(m, P).sum(axis=0)) <= 1e-8)
    assert m.intercept == pytest.approx(y.mean(), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(30, 120), m=st.integers(1, 3))
def test_rss_bound_random(seed, n, m):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(n, m))
    y = P @ rng.normal(size=m) + np.sin(P[:, 0]) + rng.normal(0, 0.3, n)
    fit = fit_gam(P, y)
    assert rss(y, predict_gam(fit, P)) <= rss(y, ols_fit(P, y)) + 1e-8
    assert np.all(np.abs(component_matrix(fit, P).sum(axis=0)) <= 1e-8)


def test_infinite_penalty_gives_additive_linear_fit():
    P, y = instance(n=120, seed=5)
    m = fit_gam(P, y, lam=1e12)
    np.testing.assert_allclose(predict_gam(m, P), ols_fit(P, y), atol=1e-6)


def test_all_zero_components_predict_intercept():
    comps = [SmoothComponent("a", [0.0, 1.0, 2.0], [0.0, 0.0, 0.0], 1.0, 1.0, 0.0),
             SmoothComponent("b", [0.0], [0.0], 0.0, 0.0, 0.0, constant=True)]
    m = EnsembleModel(3.25, comps)
    X = np.random.default_rng(0).normal(size=(10, 2)) * 10
    assert np.all(predict_gam(m, X) == 3.25)


def test_linear_beyond_boundary():
    P, y = instance()
    m = fit_gam(P, y)
    c = m.components[0]
    hi = c.knots[-1]
    xs = hi + np.array([0.5, 1.0, 2.0, 4.0])
    v = c(xs)
    slopes = np.diff(v) / np.diff(xs)
    np.testing.assert_allclose(slopes, slopes[0], rtol=1e-9, atol=1e-12)
    lo = c.knots[0]
    xs = lo - np.array([0.5, 1.0, 3.0])
    s2 = np.diff(c(xs)) / np.diff(xs)
    np.testing.assert_allclose(s2, s2[0], rtol=1e-9, atol=1e-12)


def test_spline_basis_reproduces_linear_and_knot_values():
    knots = place_knots(np.random.default_rng(3).uniform(0, 5, 100))
    F, S = spline_matrices(knots)
    x = np.linspace(-2, 7, 50)
    X = spline_basis(x, knots, F)
    np.testing.assert_allclose(X @ (2 * knots - 1), 2 * x - 1, atol=1e-12)
    np.testing.assert_allclose(spline_basis(knots, knots, F), np.eye(len(knots)), atol=1e-12)
    # linear functions carry no curvature penalty
    assert abs((2 * knots - 1) @ S @ (2 * knots - 1)) < 1e-9


def test_knot_count():
    assert len(place_knots(np.arange(100.0))) == 10
    assert len(place_knots([1.0, 2.0, 2.0, 3.0])) == 3


def test_constant_column_fixed_to_zero():
    P, y = instance()
    P = np.column_stack([P[:, 0], np.full(len(y), 4.0)])
    m = fit_gam(P, y)
    assert m.components[1].constant
    assert np.all(component_matrix(m, P)[:, 1] == 0)


def test_shift_invariance():
    P, y = instance(n=80, seed=2)
    a = predict_gam(fit_gam(P, y), P)
    Q = P.copy()
    Q[:, 1] += 17.0
    b = predict_gam(fit_gam(Q, y), Q)
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_serialization_round_trip():
    P, y = stacking_instance()
    m = fit_gam(P, y, names=["nn", "forest", "gradboost"])
    text = dumps_ensemble(m)
    back = loads_ensemble(text)
    assert back.names == ["nn", "forest", "gradboost"]
    Xq = np.random.default_rng(0).normal(10, 4, (100, 3))
    np.testing.assert_array_equal(predict_gam(back, Xq), predict_gam(m, Xq))
    assert dumps_ensemble(back) == text


def test_dimension_mismatch():
    P, y = instance()
    m = fit_gam(P, y)
    with pytest.raises(ValueError):
        predict_gam(m, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        fit_gam(P, y[:-1])


def test_too_few_rows():
    with pytest.raises(ValueError):
        fit_gam(np.arange(8.0)[:, None], np.arange(8.0))


def test_nonconvergence_warns():
    P, y = stacking_instance()
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        m = fit_gam(P, y, lam=1.0, max_iter=1)
    assert not m.converged
    assert any(issubclass(w.category, ConvergenceWarning) for w in rec)
    assert np.all(np.isfinite(predict_gam(m, P)))
