"""Local linear kernel regression of a survival curve on time.

The model smooths the (time, survival) knots of an estimated curve.  Past
the last knot it keeps following the local line fitted at the boundary,
so it can leave the range of the data freely; such extrapolations are
flagged as unreliable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import isotonic_regression

from .km import SurvivalCurve

N_CV_GRID = 25


class Kernel(str, enum.Enum):
    GAUSSIAN = "GAUSSIAN"
    # compact support; with bandwidth equal to the knot spacing each knot is
    # reproduced exactly
    EPANECHNIKOV = "EPANECHNIKOV"


class NonparametricFitError(ValueError):
    pass


@dataclass(frozen=True)
class LocalLinearModel:
    knot_t: np.ndarray
    knot_s: np.ndarray
    bandwidth: float
    kernel: Kernel = Kernel.GAUSSIAN
    isotonic: bool = False
    cv_grid: np.ndarray | None = None
    cv_scores: np.ndarray | None = None

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise NonparametricFitError("bandwidth must be positive")
        if len(self.knot_t) < 2:
            raise NonparametricFitError("local linear model needs at least two knots")

    @property
    def t_max(self) -> float:
        return float(self.knot_t[-1])

    def __call__(self, t):
        return predict(self, t)


def _weights(kernel, u):
    if kernel is Kernel.GAUSSIAN:
        return np.exp(-0.5 * u * u)
    return np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)


def _local_line(x_knots, y_knots, x, h, kernel, mask=None):
    """Intercept and slope of the weighted line at each point of ``x``.

    ``mask`` (shape ``(len(x), len(knots))``) switches knots off, which is
    how leave-one-out fits are done.  Where the weighted design is singular
    the line through the neighbouring knots is used instead.
    """
    dx = x_knots[None, :] - x[:, None]
    w = _weights(kernel, dx / h)
    if mask is not None:
        w = w * mask
    s0 = w.sum(axis=1)
    s1 = (w * dx).sum(axis=1)
    s2 = (w * dx * dx).sum(axis=1)
    t0 = (w * y_knots).sum(axis=1)
    t1 = (w * dx * y_knots).sum(axis=1)
    det = s0 * s2 - s1 * s1
    ok = (s0 > 0) & (det > 1e-10 * np.maximum(s0 * s2, 1e-300))
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(ok, (s2 * t0 - s1 * t1) / det, np.nan)
        b = np.where(ok, (s0 * t1 - s1 * t0) / det, np.nan)
    for i in np.nonzero(~ok)[0]:
        keep = np.ones(len(x_knots), bool) if mask is None else mask[i].astype(bool)
        a[i], b[i] = _secant(x_knots[keep], y_knots[keep], x[i])
    return a, b


def _secant(xk, yk, x):
    """Value and slope of the piecewise-linear interpolant (ends extended)."""
    j = int(np.clip(np.searchsorted(xk, x, side="right") - 1, 0, len(xk) - 2))
    slope = (yk[j + 1] - yk[j]) / (xk[j + 1] - xk[j])
    return yk[j] + slope * (x - xk[j]), slope


def _knots(curve: SurvivalCurve):
    t = np.asarray(curve.times, dtype=float)
    s = np.asarray(curve.survival, dtype=float)
    if t.size and t[0] > 0:
        t = np.concatenate(([0.0], t))
        s = np.concatenate(([1.0], s))
    return t, s


def bandwidth_grid(knot_t) -> np.ndarray:
    knot_t = np.asarray(knot_t, dtype=float)
    lo = float(np.min(np.diff(knot_t)))
    hi = float(knot_t[-1] - knot_t[0])
    return np.geomspace(lo, hi, N_CV_GRID)


def cv_score(knot_t, knot_s, h, kernel=Kernel.GAUSSIAN) -> float:
    """Leave-one-out mean squared prediction error at the knots."""
    n = len(knot_t)
    mask = 1.0 - np.eye(n)
    a, _ = _local_line(knot_t, knot_s, knot_t, h, kernel, mask)
    return float(np.mean((a - knot_s) ** 2))


def fit_local_linear(curve: SurvivalCurve, bandwidth: float | None = None,
                     kernel: Kernel | str = Kernel.GAUSSIAN,
                     isotonic: bool = False) -> LocalLinearModel:
    """Local linear smoother of ``curve``.

    Without an explicit ``bandwidth`` the one minimising the leave-one-out
    squared error over 25 geometric steps from the smallest knot spacing
    to the full time range is used (ties go to the smaller bandwidth).
    """
    kernel = Kernel(str(kernel).upper()) if not isinstance(kernel, Kernel) else kernel
    t, s = _knots(curve)
    if len(t) < 2:
        raise NonparametricFitError("local linear model needs at least two points")
    if bandwidth is not None:
        return LocalLinearModel(t, s, float(bandwidth), kernel, isotonic)
    grid = bandwidth_grid(t)
    scores = np.array([cv_score(t, s, h, kernel) for h in grid])
    best = int(np.argmin(scores))
    return LocalLinearModel(t, s, float(grid[best]), kernel, isotonic, grid, scores)


def predict(model: LocalLinearModel, t) -> np.ndarray:
    """Smoothed survival at ``t``, clamped to [0, 1].

    Beyond the last knot the local line at the last knot is continued.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tt = np.atleast_1d(t)
    if np.any(tt < 0):
        raise ValueError("prediction times must be non-negative")
    inside = np.minimum(tt, model.t_max)
    a, b = _local_line(model.knot_t, model.knot_s, inside, model.bandwidth, model.kernel)
    out = a + b * (tt - inside)
    out = np.clip(out, 0.0, 1.0)
    if model.isotonic and out.size > 1:
        order = np.argsort(tt, kind="stable")
        fitted = isotonic_regression(out[order], increasing=False).x
        out = np.empty_like(out)
        out[order] = fitted
    return float(out[0]) if scalar else out


def minus2ll(model: LocalLinearModel) -> float:
    """-2 log-likelihood of the knots under a Gaussian residual density.

    The conditional density of each knot value is normal around the fitted
    curve with variance ``RSS / n`` (floored at 1e-12), so the value falls
    as the fit approaches interpolation.
    """
    fitted = predict(model, model.knot_t)
    resid = model.knot_s - fitted
    n = len(resid)
    var = max(float(np.mean(resid * resid)), 1e-12)
    return float(n * (math.log(2 * math.pi * var) + 1.0))


def extrapolation_unreliable(model: LocalLinearModel, horizon: float) -> bool:
    return horizon > model.t_max
