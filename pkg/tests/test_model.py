import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from gridbso.errors import NonInvertible
from gridbso.model import (GaussianNoise, SystemModel, get_model, linear_model,
                           log_measurement_likelihood, measurement_likelihood, model_names,
                           transition_density, ungm_model)
from oracles import midpoint_integral, normal_pdf

STD = GaussianNoise.standard()


def scaled_noise_model():
    # x' = x + 2 w, y = x + v
    ones = lambda k, x, u, e: np.ones(np.shape(e)[:-1])  # noqa: E731
    return SystemModel(
        n_x=1, n_y=1,
        f=lambda k, x, u, w: x + 2 * w, h=lambda k, x, u, v: x + v,
        f_star=lambda k, x, u, xn: (np.asarray(xn) - x) / 2,
        h_star=lambda k, x, u, y: np.asarray(y) - x,
        det_jac_f_w=lambda k, x, u, w: 2 * np.ones(np.shape(w)[:-1]), det_jac_h_v=ones)


def test_transition_density_examples():
    m = ungm_model()
    assert transition_density(m, STD, 0, [0.0], None, [8.0]) == pytest.approx(0.39894, abs=1e-5)
    val = transition_density(scaled_noise_model(), STD, 0, [0.0], None, [2.0])
    assert val == pytest.approx(normal_pdf(1.0) / 2, abs=1e-12)
    assert val == pytest.approx(0.120985, abs=1e-5)


def test_transition_density_additive_case_is_noise_density():
    m = ungm_model()
    for k, x, xn in [(3, 1.5, -2.0), (7, -4.0, 10.0)]:
        drift = 0.5 * x + 25 * x / (1 + x * x) + 8 * np.cos(1.2 * k)
        assert transition_density(m, STD, k, [x], None, [xn]) == STD.density([xn - drift])


def test_measurement_likelihood_examples():
    m = ungm_model()
    assert measurement_likelihood(m, STD, 0, [10.0], None, [5.0]) == pytest.approx(0.39894, abs=1e-5)
    assert measurement_likelihood(m, STD, 0, [0.0], None, [0.0]) == pytest.approx(0.39894, abs=1e-5)
    assert measurement_likelihood(m, STD, 4, [3.0], None, [1.0]) == STD.density([1.0 - 9 / 20])


def test_log_likelihood_consistent():
    m = ungm_model()
    xs = np.linspace(-30, 30, 41)[:, None]
    lin = measurement_likelihood(m, STD, 0, xs, None, [4.0])
    log = log_measurement_likelihood(m, STD, 0, xs, None, [4.0])
    np.testing.assert_allclose(np.exp(log), lin, rtol=1e-12)


def test_non_invertible():
    m = dataclasses.replace(ungm_model(), f_star=lambda k, x, u, xn: np.full_like(xn, np.nan),
                            h_star=lambda k, x, u, y: np.full_like(y, np.inf))
    with pytest.raises(NonInvertible):
        transition_density(m, STD, 0, [0.0], None, [1.0])
    with pytest.raises(NonInvertible):
        measurement_likelihood(m, STD, 0, [0.0], None, [1.0])


@pytest.mark.parametrize("case", range(10))
def test_ungm_transition_integrates_to_one(case):
    rng = np.random.default_rng(case)
    k, x = int(rng.integers(0, 50)), float(rng.uniform(-20, 20))
    m = ungm_model()
    fn = lambda xn: transition_density(m, STD, k, np.full((xn.size, 1), x), None, xn[:, None])  # noqa: E731
    assert midpoint_integral(fn, -60, 60, 200_000) == pytest.approx(1.0, abs=1e-3)


def test_ungm_likelihood_integrates_over_y():
    m = ungm_model()
    for x in (-7.0, 0.0, 3.5):
        fn = lambda y: measurement_likelihood(m, STD, 0, np.full((y.size, 1), x), None, y[:, None])  # noqa: E731
        assert midpoint_integral(fn, -60, 60, 200_000) == pytest.approx(1.0, abs=1e-3)


@given(st.integers(0, 2**32 - 1))
def test_round_trips(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, 100))
    m = ungm_model()
    x = rng.uniform(-40, 40, (1000, 1))
    w, v = rng.standard_normal((2, 1000, 1))
    np.testing.assert_allclose(m.f_star(k, x, None, m.f(k, x, None, w)), w, atol=1e-9)
    np.testing.assert_allclose(m.h_star(k, x, None, m.h(k, x, None, v)), v, atol=1e-9)
    assert np.all(m.det_jac_f_w(k, x, None, w) > 0)

    A = rng.normal(size=(2, 2))
    G = np.eye(2) + 0.3 * rng.normal(size=(2, 2))
    lm = linear_model(A, np.eye(2), G=G)
    x2 = rng.normal(size=(1000, 2))
    w2 = rng.normal(size=(1000, 2))
    np.testing.assert_allclose(lm.f_star(k, x2, None, lm.f(k, x2, None, w2)), w2, atol=1e-9)
    assert np.all(lm.det_jac_f_w(k, x2, None, w2) > 0)


def test_linear_model_transition_density_scaling():
    # x' = x + 3 w, so p(x'|x) = N(x' - x; 0, 9)
    lm = linear_model([[1.0]], [[1.0]], G=[[3.0]])
    val = transition_density(lm, STD, 0, [1.0], None, [2.5])
    assert val == pytest.approx(normal_pdf(1.5, 0, 9), rel=1e-12)


def test_gaussian_noise_density_and_sampling():
    g = GaussianNoise([1.0, -2.0], [[2.0, 0.3], [0.3, 0.5]])
    pts = np.random.default_rng(0).normal(size=(50, 2))
    ref = multivariate_normal([1.0, -2.0], [[2.0, 0.3], [0.3, 0.5]])
    np.testing.assert_allclose(g.density(pts), ref.pdf(pts), rtol=1e-12)
    np.testing.assert_allclose(np.exp(g.log_density(pts)), g.density(pts), rtol=1e-9)
    s = g.sample(np.random.default_rng(1), 200_000)
    assert s.shape == (200_000, 2)
    np.testing.assert_allclose(s.mean(axis=0), [1, -2], atol=0.02)
    np.testing.assert_allclose(np.cov(s.T), g.cov, atol=0.02)


def test_gaussian_noise_integrates_and_scalar_input():
    g = GaussianNoise([0.5], [[3.0]])
    assert midpoint_integral(lambda x: g.density(x[:, None]), -40, 40, 200_000) == pytest.approx(1.0, abs=1e-4)
    assert isinstance(g.log_density(0.2), float)
    assert g.density(0.5) == pytest.approx(normal_pdf(0.0, 0, 3.0), rel=1e-12)


@pytest.mark.parametrize("cov", [[[1.0, 2.0], [0.0, 1.0]], [[1.0, 2.0], [2.0, 1.0]]])
def test_gaussian_noise_rejects_bad_cov(cov):
    with pytest.raises(ValueError):
        GaussianNoise([0, 0], cov)


def test_registry():
    assert "ungm" in model_names()
    spec = get_model("ungm")
    assert spec.x0.cov[0, 0] == 2.0
    assert spec.model.n_x == 1
    with pytest.raises(KeyError):
        get_model("nope")
