import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from survext.dataset import Dataset
from survext.km import SurvivalCurve, kaplan_meier
from survext.nonparametric import (Kernel, LocalLinearModel, NonparametricFitError,
                                   bandwidth_grid, cv_score, extrapolation_unreliable,
                                   fit_local_linear, minus2ll, predict)


def noisy_curve(seed=0, n=40):
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(1, 48, n))
    s = np.clip(np.exp(-t / 20) + rng.normal(0, 0.02, n), 0, 1)
    return SurvivalCurve(t, s)


def test_epanechnikov_interpolates_at_min_spacing():
    c = noisy_curve()
    m0 = fit_local_linear(c, kernel=Kernel.EPANECHNIKOV)
    h = float(np.min(np.diff(m0.knot_t)))
    m = fit_local_linear(c, bandwidth=h, kernel=Kernel.EPANECHNIKOV)
    np.testing.assert_allclose(predict(m, m.knot_t), m.knot_s, atol=1e-12)


def test_gaussian_tiny_bandwidth_hits_knots():
    c = noisy_curve()
    h = 0.1 * float(np.min(np.diff(np.concatenate(([0.0], c.times)))))
    m = fit_local_linear(c, bandwidth=h)
    np.testing.assert_allclose(predict(m, c.times), c.survival, atol=1e-9)


@pytest.mark.parametrize("kernel", list(Kernel))
@pytest.mark.parametrize("h", [0.5, 3.0, 50.0])
def test_linear_data_reproduced(kernel, h):
    t = np.linspace(1, 40, 15)
    c = SurvivalCurve(t, 1 - 0.015 * t)
    m = fit_local_linear(c, bandwidth=h, kernel=kernel)
    q = np.linspace(0, 40, 101)
    np.testing.assert_allclose(predict(m, q), 1 - 0.015 * q, atol=1e-12)
    # continued line beyond the last knot, then clamped at 0
    assert predict(m, 60.0) == pytest.approx(1 - 0.015 * 60, abs=1e-12)
    assert predict(m, 100.0) == 0.0


def test_cv_choice_beats_grid():
    c = noisy_curve(3)
    m = fit_local_linear(c)
    assert m.cv_grid.size == 25
    assert m.cv_grid[0] == pytest.approx(np.min(np.diff(m.knot_t)))
    assert m.cv_grid[-1] == pytest.approx(m.knot_t[-1] - m.knot_t[0])
    best = cv_score(m.knot_t, m.knot_s, m.bandwidth)
    for h in bandwidth_grid(m.knot_t):
        assert best <= cv_score(m.knot_t, m.knot_s, h)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.05, 100.0))
def test_predictions_in_unit_interval(seed, h):
    m = fit_local_linear(noisy_curve(seed, 12), bandwidth=h)
    v = predict(m, np.linspace(0, 500, 200))
    assert np.all((v >= 0) & (v <= 1))


def test_minus2ll_falls_towards_min_spacing():
    c = noisy_curve(5)
    t = np.concatenate(([0.0], c.times))
    grid = bandwidth_grid(t)
    vals = [minus2ll(fit_local_linear(c, bandwidth=h, kernel=Kernel.EPANECHNIKOV)) for h in grid[::3]]
    assert vals[0] < vals[-1]
    assert vals[0] == min(vals)


def test_isotonic_option():
    m = fit_local_linear(noisy_curve(1), bandwidth=0.5, isotonic=True)
    v = predict(m, np.linspace(0, 60, 300))
    assert np.all(np.diff(v) <= 1e-15)


def test_errors_and_flags():
    with pytest.raises(NonparametricFitError):
        fit_local_linear(SurvivalCurve(np.array([]), np.array([])))
    with pytest.raises(NonparametricFitError):
        LocalLinearModel(np.array([0.0, 1.0]), np.array([1.0, 0.5]), 0.0)
    km = kaplan_meier(Dataset.from_arrays([1, 2, 3, 4, 5], [1, 1, 1, 1, 0]))
    m = fit_local_linear(km)
    assert extrapolation_unreliable(m, 72.0)
    assert not extrapolation_unreliable(m, 4.0)
