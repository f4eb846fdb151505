"""Product-limit and actuarial estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class SurvivalCurve:
    """Right-continuous step estimate of S(t).

    ``times`` are the step (event) times; before ``times[0]`` the curve is 1.
    ``at_risk`` and ``events`` are present for product-limit curves and feed
    the Greenwood-type variance of the restricted mean.  ``max_time`` is the
    end of follow-up, beyond which the curve is only carried forward.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray | None = None
    se: np.ndarray | None = None
    events: np.ndarray | None = None
    max_time: float | None = None

    def __post_init__(self):
        for name in ("times", "survival", "at_risk", "se", "events"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float if name in ("times", "survival", "se") else np.int64)
                v.setflags(write=False)
                object.__setattr__(self, name, v)
        if self.times.shape != self.survival.shape:
            raise ValueError("times and survival differ in length")
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError("curve times must be strictly increasing")

    def __call__(self, t):
        """Evaluate the step function at ``t``."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate(([1.0], self.survival))
        return vals[idx]


@dataclass(frozen=True)
class LifeTable:
    interval_starts: np.ndarray
    n_risk: np.ndarray
    n_events: np.ndarray
    n_censored: np.ndarray
    survival: np.ndarray

    def __post_init__(self):
        for name in ("interval_starts", "survival"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("n_risk", "n_events", "n_censored"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        if np.any(self.n_events + self.n_censored > self.n_risk):
            raise ValueError("life table has more exits than subjects at risk")

    def __len__(self):
        return len(self.interval_starts)

    def widths(self) -> np.ndarray:
        starts = self.interval_starts
        if len(starts) == 1:
            return np.ones(1)
        w = np.diff(starts)
        return np.append(w, w[-1])


def at_risk_counts(data: Dataset, t) -> np.ndarray:
    """Number under observation at ``t``: entry < t <= time."""
    t = np.asarray(t, dtype=float)
    exit_sorted = np.sort(data.time)
    entry_sorted = np.sort(data.entry)
    n_exit_ge = len(exit_sorted) - np.searchsorted(exit_sorted, t, side="left")
    n_entry_ge = len(entry_sorted) - np.searchsorted(entry_sorted, t, side="left")
    return n_exit_ge - n_entry_ge


def kaplan_meier(data: Dataset) -> SurvivalCurve:
    """Kaplan-Meier estimate with Greenwood standard errors.

    Subjects join the risk set after their entry time; at tied times events
    are counted before censorings.
    """
    if len(data) == 0 or data.n_events == 0:
        raise EstimationError("Kaplan-Meier needs at least one observed event")
    ev_times = data.time[data.event]
    times, d = np.unique(ev_times, return_counts=True)
    n = at_risk_counts(data, times)
    if np.any(n <= 0):
        raise EstimationError("event time with empty risk set")
    surv = np.cumprod(1.0 - d / n)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(n > d, d / (n * (n - d)), 0.0)
    se = surv * np.sqrt(np.cumsum(terms))
    se = np.where(surv > 0, se, 0.0)
    return SurvivalCurve(times, surv, n, se, d, float(data.time.max()))


def life_table(data: Dataset, interval_width: float) -> LifeTable:
    """Actuarial life table with the half-censoring adjustment.

    A subject belongs to the risk set of ``[start, end)`` if it entered before
    ``end`` and was still under observation at ``start``.
    """
    if not interval_width > 0:
        raise ValueError("interval_width must be positive")
    if len(data) == 0:
        raise EstimationError("empty dataset")
    t, ev, entry = data.time, data.event, data.entry
    k = int(math.floor(float(t.max()) / interval_width)) + 1
    starts = np.arange(k) * interval_width
    n_risk = np.empty(k, dtype=np.int64)
    n_ev = np.empty(k, dtype=np.int64)
    n_c = np.empty(k, dtype=np.int64)
    surv = np.empty(k)
    s = 1.0
    for j, a in enumerate(starts):
        b = a + interval_width
        in_int = (t >= a) & (t < b)
        n_risk[j] = int(np.sum((entry < b) & (t >= a)))
        n_ev[j] = int(np.sum(in_int & ev))
        n_c[j] = int(np.sum(in_int & ~ev))
        n_eff = n_risk[j] - 0.5 * n_c[j]
        if n_ev[j] > 0 and n_eff > 0:
            s *= max(0.0, 1.0 - n_ev[j] / n_eff)
        surv[j] = s
    return LifeTable(starts, n_risk, n_ev, n_c, surv)


def median_survival(curve: SurvivalCurve) -> float:
    below = np.nonzero(curve.survival <= 0.5)[0]
    if not below.size:
        return math.inf
    return float(curve.times[below[0]])
