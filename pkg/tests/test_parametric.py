import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from survext.dataset import Dataset
from survext.parametric import (ALL_KINDS, FitError, ModelKind, ParameterError, ParamVector,
                                cumulative_hazard, defective_limit, density, extrapolate,
                                fit_mle, from_unconstrained, hazard, log_likelihood,
                                numerical_gradient, simulate, survival, to_unconstrained)
from conftest import make_data

K = ModelKind


def random_params(kind, rng):
    if kind is K.EXPONENTIAL:
        return ParamVector(lam=rng.uniform(0.005, 0.5))
    if kind is K.LOGNORMAL:
        return ParamVector(mu=rng.uniform(0.5, 4.5), sigma=rng.uniform(0.3, 2.0))
    if kind is K.GOMPERTZ:
        return ParamVector(lam=rng.uniform(0.005, 0.2), p=rng.uniform(-0.1, 0.1))
    return ParamVector(lam=rng.uniform(0.01, 0.3), p=rng.uniform(0.4, 3.0))


def test_examples():
    assert survival(K.EXPONENTIAL, ParamVector(lam=0.1), 0.0) == 1.0
    assert survival(K.EXPONENTIAL, ParamVector(lam=0.1), 10.0) == pytest.approx(math.exp(-1), rel=1e-14)
    assert survival(K.LOGLOGISTIC, ParamVector(lam=0.05, p=2), 20.0) == pytest.approx(0.5, rel=1e-14)
    assert survival(K.LOGNORMAL, ParamVector(mu=math.log(30), sigma=1), 30.0) == pytest.approx(0.5, rel=1e-14)
    assert hazard(K.EXPONENTIAL, ParamVector(lam=0.1), 7.3) == pytest.approx(0.1, rel=1e-14)
    # mpmath, 30 digits: 0.01 * exp(0.5)
    assert hazard(K.GOMPERTZ, ParamVector(lam=0.01, p=0.05), 10.0) == pytest.approx(
        0.0164872127070012814684865078781, rel=1e-13)


@pytest.mark.parametrize("kind, params, ref", [
    (K.WEIBULL, ParamVector(lam=0.05, p=0.7), stats.weibull_min(0.7, scale=20.0)),
    (K.LOGNORMAL, ParamVector(mu=math.log(11), sigma=1.1), stats.lognorm(1.1, scale=11.0)),
    (K.LOGLOGISTIC, ParamVector(lam=0.08, p=1.4), stats.fisk(1.4, scale=12.5)),
    (K.EXPONENTIAL, ParamVector(lam=0.2), stats.expon(scale=5.0)),
])
def test_against_scipy(kind, params, ref):
    t = np.linspace(0.1, 150, 400)
    np.testing.assert_allclose(survival(kind, params, t), ref.sf(t), rtol=1e-10, atol=1e-300)
    np.testing.assert_allclose(density(kind, params, t), ref.pdf(t), rtol=1e-9)


def test_gompertz_against_scipy():
    # scipy's gompertz(c, scale) has S = exp(-c (e^{t/scale} - 1))
    lam, p = 0.02, 0.05
    ref = stats.gompertz(lam / p, scale=1 / p)
    t = np.linspace(0.1, 100, 300)
    np.testing.assert_allclose(survival(K.GOMPERTZ, ParamVector(lam=lam, p=p), t), ref.sf(t), rtol=1e-10)


def test_lognormal_far_tail():
    t = np.exp(math.log(11) + 1.1 * 30)
    ls = math.log(survival(K.LOGNORMAL, ParamVector(mu=math.log(11), sigma=1.1), t) or 1e-320)
    assert ls < -400
    assert cumulative_hazard(K.LOGNORMAL, ParamVector(mu=math.log(11), sigma=1.1), t) == pytest.approx(
        -stats.norm.logsf(30.0), rel=1e-10)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_hazard_matches_log_survival_derivative(kind):
    rng = np.random.default_rng(11)
    for _ in range(50):
        par = random_params(kind, rng)
        t = rng.uniform(0.5, 80.0)
        h = 1e-5 * t
        fd = (cumulative_hazard(kind, par, t + h) - cumulative_hazard(kind, par, t - h)) / (2 * h)
        assert fd == pytest.approx(hazard(kind, par, t), rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_survival_shape(kind):
    rng = np.random.default_rng(3)
    grid = np.concatenate(([0.0], np.geomspace(1e-3, 1e4, 300)))
    for _ in range(20):
        par = random_params(kind, rng)
        s = survival(kind, par, grid)
        assert s[0] == 1.0
        assert np.all((s >= 0) & (s <= 1))
        assert np.all(np.diff(s) <= 0)
        assert np.all(hazard(kind, par, grid[1:]) >= 0)


def test_limits_at_infinity():
    big = 1e9
    for kind in (K.EXPONENTIAL, K.WEIBULL, K.LOGNORMAL, K.LOGLOGISTIC):
        par = random_params(kind, np.random.default_rng(0))
        assert survival(kind, par, big) < 1e-6
        assert defective_limit(kind, par) == 0.0


def test_gompertz_defective_tail():
    par = ParamVector(lam=0.02, p=-0.05)
    assert defective_limit(K.GOMPERTZ, par) == pytest.approx(math.exp(-0.4), rel=1e-14)
    assert survival(K.GOMPERTZ, par, 1e6) == pytest.approx(math.exp(-0.4), rel=1e-12)


def test_gompertz_small_shape_is_exponential():
    t = np.linspace(0, 72, 50)
    np.testing.assert_allclose(survival(K.GOMPERTZ, ParamVector(lam=0.1, p=1e-14), t),
                               survival(K.EXPONENTIAL, ParamVector(lam=0.1), t), rtol=1e-10)


def test_hazard_at_zero():
    assert hazard(K.LOGLOGISTIC, ParamVector(lam=0.1, p=2.0), 0.0) == 0.0
    assert hazard(K.LOGLOGISTIC, ParamVector(lam=0.1, p=1.0), 0.0) == 0.1
    assert hazard(K.LOGNORMAL, ParamVector(mu=1, sigma=1), 0.0) == 0.0


def test_invalid_params():
    with pytest.raises(ParameterError):
        survival(K.WEIBULL, ParamVector(lam=0.1, p=-1.0), 1.0)
    with pytest.raises(ParameterError):
        survival(K.LOGNORMAL, ParamVector(lam=0.1), 1.0)


def test_exponential_loglik(toy_exp):
    # mpmath, 30 digits: 3 ln 0.3 - 3
    assert log_likelihood(K.EXPONENTIAL, ParamVector(lam=0.3), toy_exp) == pytest.approx(
        -6.61191841297780797786823865329, rel=1e-14)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_truncation_cancellation(kind):
    t = np.array([1.0, 2.0, 5.0])
    d = Dataset.from_arrays(t, [False] * 3, np.nextafter(t, 0))
    par = random_params(kind, np.random.default_rng(9))
    assert abs(log_likelihood(kind, par, d)) < 1e-12


def test_all_censored_loglik_increases_as_rate_falls():
    d = Dataset.from_arrays([1.0, 2.0], [False, False])
    v = [log_likelihood(K.EXPONENTIAL, ParamVector(lam=l), d) for l in (1.0, 0.1, 1e-3)]
    assert v[0] < v[1] < v[2] < 0


def test_loglik_nonfinite_sentinel():
    d = Dataset.from_arrays([1e4], [True])
    assert log_likelihood(K.GOMPERTZ, ParamVector(lam=5.0, p=2.0), d) == -math.inf


def test_backends_agree(backend):
    d = make_data(n=150, seed=4)
    for kind in ALL_KINDS:
        par = random_params(kind, np.random.default_rng(1))
        v = log_likelihood(kind, par, d, backend=backend)
        assert v == pytest.approx(log_likelihood(kind, par, d, backend="numpy"), rel=1e-12)


def test_exponential_mle(toy_exp):
    fit = fit_mle(K.EXPONENTIAL, toy_exp)
    assert abs(fit.params.lam - 0.3) < 1e-10
    assert fit.aic == pytest.approx(fit.minus2LL + 2)
    assert fit.bic == pytest.approx(fit.minus2LL + math.log(4))


def test_weibull_on_exponential_data():
    d = make_data(K.EXPONENTIAL, ParamVector(lam=0.1), n=500, seed=2024, censor=None)
    fit = fit_mle(K.WEIBULL, d)
    assert abs(fit.params.p - 1.0) < 0.1
    assert fit.converged


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_fit_recovers_and_reports(kind):
    rng = np.random.default_rng(5)
    par = random_params(kind, rng) if kind is not K.GOMPERTZ else ParamVector(lam=0.02, p=0.05)
    t, e = simulate(kind, par, 400, rng, 60.0)
    fit = fit_mle(kind, Dataset.from_arrays(np.maximum(t, 1e-6), e))
    assert fit.converged
    assert fit.aic == pytest.approx(fit.minus2LL + 2 * fit.k, rel=1e-14)
    assert np.all(np.linalg.eigvalsh(fit.covariance) >= 0)
    # the optimum beats the truth and its gradient vanishes
    assert -0.5 * fit.minus2LL >= log_likelihood(kind, par, Dataset.from_arrays(np.maximum(t, 1e-6), e)) - 1e-9


def test_fit_errors():
    with pytest.raises(FitError):
        fit_mle(K.WEIBULL, Dataset.from_arrays([2.0, 2.0], [True, True]))
    with pytest.raises(FitError):
        fit_mle(K.EXPONENTIAL, Dataset.from_arrays([2.0], [False]))


def test_extrapolate():
    fit = fit_mle(K.EXPONENTIAL, Dataset.from_arrays([1.0, 2.0, 3.0, 4.0], [True, True, True, False]))
    c = extrapolate(fit, [0.0])
    assert list(c.survival) == [1.0] and c.se[0] == 0.0
    grid = np.arange(0, 73, 12.0)
    c = extrapolate(fit, grid)
    np.testing.assert_allclose(c.survival, np.exp(-0.3 * grid), rtol=1e-12)
    # delta method for exp(-lam t): se = t S sd(lam); sd(lam)=lam/sqrt(d)
    np.testing.assert_allclose(c.se, grid * c.survival * 0.3 / math.sqrt(3), rtol=1e-4, atol=1e-15)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_extrapolated_curve_monotone(kind):
    fit = fit_mle(kind, make_data(n=120, seed=8))
    assert np.all(np.diff(extrapolate(fit, np.linspace(0, 500, 333)).survival) <= 0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.0, 200.0))
def test_reparameterization_roundtrip(lam, t):
    for kind, par in ((K.WEIBULL, ParamVector(lam=lam, p=1.3)),
                      (K.GOMPERTZ, ParamVector(lam=lam, p=-0.02))):
        back = from_unconstrained(kind, to_unconstrained(kind, par))
        assert survival(kind, back, t) == pytest.approx(survival(kind, par, t), rel=1e-12, abs=1e-300)


def test_numerical_gradient_of_loglik():
    d = make_data(K.EXPONENTIAL, ParamVector(lam=0.1), n=100, seed=1)
    lam = 0.08
    # analytic exponential score d/lam - exposure, via chain rule on log lam
    g = numerical_gradient(lambda x: log_likelihood(K.EXPONENTIAL, ParamVector(lam=math.exp(x[0])), d),
                           np.array([math.log(lam)]))
    exact = d.n_events - lam * float(np.sum(d.time))
    assert g[0] == pytest.approx(exact, rel=1e-5)
