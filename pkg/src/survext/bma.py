"""Model averaging of posterior survival curves."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .km import SurvivalCurve
from .metrics import DEFAULT_HORIZON, auc_natural


class Scheme(str, enum.Enum):
    DIC = "DIC"
    AUC = "AUC"
    LOCATION = "LOCATION"


class WeightingError(ValueError):
    pass


@dataclass(frozen=True)
class BmaWeights:
    scheme: Scheme
    w: np.ndarray
    labels: tuple[str, ...] = ()
    dic_mode: str = "delta"

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or np.any(w < 0) or not math.isclose(float(w.sum()), 1.0, abs_tol=1e-12):
            raise WeightingError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "w", w)


def weights(scheme: Scheme | str, dic=None, auc=None, mu=None, labels: Sequence[str] = (),
            dic_mode: str = "delta") -> BmaWeights:
    """Normalised model weights.

    DIC: ``exp(-(DIC_i - min DIC)/2)`` for ``dic_mode="delta"``, or the raw
    inverse ``1/DIC_i`` for ``dic_mode="inverse"``.  AUC: proportional to
    the restricted AUC.  LOCATION: proportional to the location ``mu``,
    which must then be positive for every model.
    """
    scheme = Scheme(str(scheme).upper()) if not isinstance(scheme, Scheme) else scheme
    if scheme is Scheme.DIC:
        v = _values(dic, "DIC")
        if dic_mode == "delta":
            raw = np.exp(-0.5 * (v - v.min()))
        elif dic_mode == "inverse":
            if np.any(v <= 0):
                raise WeightingError("inverse-DIC weights need positive DIC values")
            raw = 1.0 / v
        else:
            raise WeightingError(f"unknown DIC weighting mode {dic_mode!r}")
    elif scheme is Scheme.AUC:
        raw = _values(auc, "AUC")
        if np.any(raw < 0) or not raw.sum() > 0:
            raise WeightingError("AUC weights need non-negative AUCs with a positive total")
    else:
        raw = _values(mu, "location")
        if np.any(raw <= 0):
            raise WeightingError("location weights need every mu > 0")
    w = raw / raw.sum()
    return BmaWeights(scheme, w, tuple(labels), dic_mode)


def _values(v, name):
    if v is None:
        raise WeightingError(f"{name} values are required for this scheme")
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise WeightingError("model averaging needs at least two models")
    if not np.all(np.isfinite(v)):
        raise WeightingError(f"non-finite {name} value")
    return v


def mixture_moments(w, means, variances):
    """Mean and variance of a finite mixture (within plus between variance)."""
    w = np.asarray(w, dtype=float)
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    shape = (-1,) + (1,) * (means.ndim - 1)
    m = np.sum(w.reshape(shape) * means, axis=0)
    second = np.sum(w.reshape(shape) * (variances + means * means), axis=0)
    return m, np.maximum(second - m * m, 0.0)


def average_curve(bw: BmaWeights, curves: Sequence, grid, grids: Sequence | None = None) -> SurvivalCurve:
    """Weighted mixture of per-model survival on ``grid``.

    Each entry of ``curves`` is either a posterior-mean curve (1-D) or a
    matrix of survival draws (draws x grid).  The returned curve's ``se``
    is the pointwise mixture SD.
    """
    grid = np.asarray(grid, dtype=float)
    if len(curves) != len(bw.w):
        raise WeightingError(f"{len(curves)} curves for {len(bw.w)} weights")
    if grids is not None:
        for g in grids:
            if np.shape(g) != grid.shape or not np.array_equal(np.asarray(g, dtype=float), grid):
                raise WeightingError("component curves are not on the common grid")
    means, variances = [], []
    for c in curves:
        c = np.asarray(c, dtype=float)
        if c.shape[-1] != grid.size:
            raise WeightingError(
                f"curve has {c.shape[-1]} grid values, expected {grid.size}"
            )
        if c.ndim == 1:
            means.append(c)
            variances.append(np.zeros_like(c))
        else:
            means.append(c.mean(axis=0))
            variances.append(c.var(axis=0, ddof=1) if len(c) > 1 else np.zeros(grid.size))
    m, v = mixture_moments(bw.w, np.array(means), np.array(variances))
    # an exact 1 for degenerate weights keeps the first curve bit-for-bit
    if np.count_nonzero(bw.w) == 1:
        m = means[int(np.argmax(bw.w))]
    return SurvivalCurve(grid, np.clip(m, 0.0, 1.0), se=np.sqrt(v))


@dataclass(frozen=True)
class BmaResult:
    weights: BmaWeights
    dic: np.ndarray
    auc: np.ndarray
    auc_sd: np.ndarray
    mu: np.ndarray
    mixture_auc: float
    mixture_auc_sd: float
    horizon: float
    flags: tuple[str, ...] = field(default_factory=tuple)


def model_average(samples: Sequence, scheme: Scheme | str = Scheme.DIC,
                  horizon: float = DEFAULT_HORIZON, labels: Sequence[str] | None = None,
                  dic_mode: str = "delta") -> BmaResult:
    """Average posterior samples and summarise the mixture restricted AUC."""
    if len(samples) < 2:
        raise WeightingError("model averaging needs at least two models")
    labels = tuple(labels) if labels else tuple(s.kind.value for s in samples)
    aucs = []
    for s in samples:
        a, b = s.natural_draws()
        aucs.append(auc_natural(s.kind, a, b, horizon))
    auc_mean = np.array([float(np.mean(x)) for x in aucs])
    auc_sd = np.array([float(np.std(x, ddof=1)) for x in aucs])
    dic = np.array([s.dic for s in samples])
    mu = np.array([float(np.mean(s.draws[:, 0])) for s in samples])
    bw = weights(scheme, dic=dic, auc=auc_mean, mu=mu, labels=labels, dic_mode=dic_mode)
    m, v = mixture_moments(bw.w, auc_mean, auc_sd ** 2)
    return BmaResult(bw, dic, auc_mean, auc_sd, mu, float(m), float(math.sqrt(v)), float(horizon))
