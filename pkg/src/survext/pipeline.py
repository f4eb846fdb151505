"""End-to-end comparison of extrapolation strategies for one arm."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bayes
from .bma import Scheme, average_curve, model_average
from .dataset import Dataset, LongTermAnchor, blend
from .metrics import DEFAULT_HORIZON, auc_fit, auc_posterior
from .parametric import ModelKind, extrapolate, fit_mle

DEFAULT_ALPHAS = (0.001, 0.2, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class AucRow:
    method: str
    arm: str
    horizon: float
    auc: float
    se: float
    flags: tuple[str, ...] = ()

    def as_list(self):
        return [self.method, self.arm, self.horizon, self.auc, self.se, ";".join(self.flags)]


@dataclass
class ComparisonResult:
    rows: list[AucRow]
    curves: list[tuple[str, np.ndarray, np.ndarray]] = field(default_factory=list)
    samples: dict = field(default_factory=dict)


def truncated_registry(registry: Dataset, join_time: float) -> Dataset:
    """Registry records past ``join_time``, left-truncated there."""
    return Dataset(blend(Dataset(()), registry, join_time).records, registry.label)


def _flags(s):
    return () if s.converged else ("not-converged",)


def _best_alpha(samples):
    # lowest DIC; ties go to the smaller alpha
    return min(samples, key=lambda s: (s.dic, s.report["alpha"]))


def compare_strategies(rct: Dataset, registry: Dataset | None, join_time: float | None,
                       anchor: LongTermAnchor | None, alphas=DEFAULT_ALPHAS, alpha0: float = 1.0,
                       priors: bayes.PriorSpec | None = None,
                       config: bayes.McmcConfig | None = None,
                       horizon: float = DEFAULT_HORIZON, arm: str = "SOC",
                       scheme: Scheme | str = Scheme.DIC, dic_mode: str = "delta",
                       grid=None, backend=None) -> ComparisonResult:
    """Six restricted-AUC estimates for the lognormal family.

    1. maximum likelihood on the trial data;
    2. maximum likelihood on trial data blended with the registry;
    3. anchored posterior without the registry, best alpha by DIC;
    4. the same with the registry as a power prior (weight ``alpha0``);
    5. DIC-weighted average of lognormal and log-logistic posteriors;
    6. the same with the registry power prior.

    Without a registry rows 2, 4 and 6 are NaN with a ``no-registry`` flag;
    without an anchor rows 3 and 4 are plain posteriors flagged ``no-anchor``.
    """
    priors = priors or bayes.PriorSpec()
    config = config or bayes.McmcConfig()
    if join_time is None:
        join_time = float(rct.time.max())
    if grid is None:
        t_end = max(horizon, anchor.t_obs if anchor else 0.0, float(rct.time.max()))
        grid = np.linspace(0.0, 1.1 * t_end, 221)
    LN, LL = ModelKind.LOGNORMAL, ModelKind.LOGLOGISTIC
    rows: list[AucRow] = []
    curves = []
    samples = {}

    def nan_row(method, flag):
        rows.append(AucRow(method, arm, horizon, math.nan, math.nan, (flag,)))

    fit = fit_mle(LN, rct, backend)
    a = auc_fit(fit, horizon)
    rows.append(AucRow("non-informative", arm, horizon, a.value, a.se,
                       () if fit.converged else ("not-converged",)))
    curves.append(("lognormal MLE", grid, extrapolate(fit, grid).survival))

    hist = None
    if registry is not None and len(registry):
        hist = truncated_registry(registry, join_time)
        fit_b = fit_mle(LN, blend(rct, registry, join_time), backend)
        a = auc_fit(fit_b, horizon)
        rows.append(AucRow("blended", arm, horizon, a.value, a.se,
                           (f"join={join_time:g}",) + (() if fit_b.converged else ("not-converged",))))
        curves.append(("lognormal MLE, blended", grid, extrapolate(fit_b, grid).survival))
    else:
        nan_row("blended", "no-registry")

    for method, h in (("power", None), ("power + registry", hist)):
        if method == "power + registry" and h is None:
            nan_row(method, "no-registry")
            continue
        if anchor is not None:
            fits = bayes.constrained_fit(LN, rct, anchor, alphas, priors, config,
                                         historical=h, alpha0=alpha0 if h is not None else 0.0,
                                         horizon=horizon, backend=backend)
            best = _best_alpha(fits)
            flags = (f"alpha={best.report['alpha']:g}",)
        else:
            spec = bayes.PowerPriorSpec(h, alpha0 if h is not None else 0.0)
            best = bayes.sample(LN, rct, spec, priors, config, backend)
            post = auc_posterior(best, horizon=horizon)
            best.report.update(auc_mean=post.value, auc_sd=post.se)
            flags = ("no-anchor",)
        if h is not None:
            flags += (f"alpha0={alpha0:g}",)
        rows.append(AucRow(method, arm, horizon, best.report["auc_mean"], best.report["auc_sd"],
                           flags + _flags(best)))
        samples[method] = best
        curves.append((f"{method} posterior mean", grid, bayes.posterior_mean_curve(best, grid)))

    for method, h in (("BMA", None), ("BMA + registry", hist)):
        if method == "BMA + registry" and h is None:
            nan_row(method, "no-registry")
            continue
        spec = bayes.PowerPriorSpec(h, alpha0 if h is not None else 0.0)
        pair = [bayes.sample(k, rct, spec, priors, config, backend) for k in (LN, LL)]
        res = model_average(pair, scheme, horizon, dic_mode=dic_mode)
        w = res.weights.w
        flags = (f"weights={res.weights.scheme.value}:{w[0]:.4f}/{w[1]:.4f}",)
        if res.weights.scheme is Scheme.DIC:
            flags += (f"dic-mode={dic_mode}",)
        if not all(s.converged for s in pair):
            flags += ("not-converged",)
        rows.append(AucRow(method, arm, horizon, res.mixture_auc, res.mixture_auc_sd, flags))
        samples[method] = (pair, res)
        mix = average_curve(res.weights, [s.survival_draws(grid) for s in pair], grid)
        curves.append((f"{method} mixture", grid, mix.survival))
    return ComparisonResult(rows, curves, samples)
