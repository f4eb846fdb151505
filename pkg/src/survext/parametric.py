"""Exponential, Weibull, lognormal, log-logistic and Gompertz survival models.

Parameterisations (t in months):

* exponential  ``S = exp(-lam t)``
* Weibull      ``S = exp(-(lam t)^p)``
* lognormal    ``S = 1 - Phi((log t - mu) / sigma)``
* log-logistic ``S = 1 / (1 + (lam t)^p)``
* Gompertz     ``h = lam exp(p t)``, ``S = exp(-(lam / p) (exp(p t) - 1))``;
  ``p -> 0`` gives the exponential.  With ``p < 0`` the distribution is
  defective: ``S(inf) = exp(lam / p) > 0``.

Fitting works on an unconstrained vector: log of every positive parameter,
identity for ``mu`` and the Gompertz shape.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import kernels
from .dataset import Dataset
from .km import SurvivalCurve, kaplan_meier, median_survival


class ParameterError(ValueError):
    pass


class FitError(ValueError):
    pass


class ModelKind(str, enum.Enum):
    EXPONENTIAL = "exponential"
    WEIBULL = "weibull"
    LOGNORMAL = "lognormal"
    LOGLOGISTIC = "loglogistic"
    GOMPERTZ = "gompertz"

    @property
    def code(self) -> int:
        return _CODES[self]

    @property
    def n_params(self) -> int:
        return 1 if self is ModelKind.EXPONENTIAL else 2

    @property
    def param_names(self) -> tuple[str, ...]:
        return _NAMES[self]

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower().replace("-", "").replace("_", "")
        aliases = {"exp": "exponential", "ln": "lognormal", "ll": "loglogistic",
                   "gomp": "gompertz", "wei": "weibull"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ValueError(f"unknown model {value!r}") from None


_CODES = {
    ModelKind.EXPONENTIAL: kernels.EXPONENTIAL,
    ModelKind.WEIBULL: kernels.WEIBULL,
    ModelKind.LOGNORMAL: kernels.LOGNORMAL,
    ModelKind.LOGLOGISTIC: kernels.LOGLOGISTIC,
    ModelKind.GOMPERTZ: kernels.GOMPERTZ,
}
_NAMES = {
    ModelKind.EXPONENTIAL: ("lam",),
    ModelKind.WEIBULL: ("lam", "p"),
    ModelKind.LOGNORMAL: ("mu", "sigma"),
    ModelKind.LOGLOGISTIC: ("lam", "p"),
    ModelKind.GOMPERTZ: ("lam", "p"),
}
ALL_KINDS = tuple(ModelKind)


@dataclass(frozen=True)
class ParamVector:
    lam: float | None = None
    p: float | None = None
    mu: float | None = None
    sigma: float | None = None

    @property
    def tau(self) -> float | None:
        return None if self.sigma is None else 1.0 / self.sigma

    def as_dict(self) -> dict:
        return {k: v for k, v in (("lam", self.lam), ("p", self.p), ("mu", self.mu),
                                  ("sigma", self.sigma)) if v is not None}


def validate(kind: ModelKind, params: ParamVector) -> tuple[float, float]:
    """Check ``params`` for ``kind`` and return the kernel's natural ``(a, b)``."""
    kind = ModelKind.parse(kind)

    def need(name, positive):
        v = getattr(params, name)
        if v is None or not math.isfinite(v):
            raise ParameterError(f"{kind.value}: parameter {name} missing or non-finite")
        if positive and not v > 0:
            raise ParameterError(f"{kind.value}: parameter {name} must be positive, got {v}")
        return float(v)

    if kind is ModelKind.EXPONENTIAL:
        return need("lam", True), 0.0
    if kind in (ModelKind.WEIBULL, ModelKind.LOGLOGISTIC):
        return need("lam", True), need("p", True)
    if kind is ModelKind.LOGNORMAL:
        return need("mu", False), need("sigma", True)
    return need("lam", True), need("p", False)


def to_unconstrained(kind: ModelKind, params: ParamVector) -> np.ndarray:
    kind = ModelKind.parse(kind)
    a, b = validate(kind, params)
    if kind is ModelKind.EXPONENTIAL:
        return np.array([math.log(a)])
    if kind is ModelKind.LOGNORMAL:
        return np.array([a, math.log(b)])
    if kind is ModelKind.GOMPERTZ:
        return np.array([math.log(a), b])
    return np.array([math.log(a), math.log(b)])


def from_unconstrained(kind: ModelKind, x) -> ParamVector:
    kind = ModelKind.parse(kind)
    x = np.asarray(x, dtype=float)
    if kind is ModelKind.EXPONENTIAL:
        return ParamVector(lam=math.exp(x[0]))
    if kind is ModelKind.LOGNORMAL:
        return ParamVector(mu=float(x[0]), sigma=math.exp(x[1]))
    if kind is ModelKind.GOMPERTZ:
        return ParamVector(lam=math.exp(x[0]), p=float(x[1]))
    return ParamVector(lam=math.exp(x[0]), p=math.exp(x[1]))


def _natural_from_x(kind: ModelKind, x: np.ndarray):
    """Vectorised unconstrained -> (a, b); ``x`` has parameters on axis 0."""
    with np.errstate(over="ignore"):
        if kind is ModelKind.EXPONENTIAL:
            return np.exp(x[0]), np.zeros_like(x[0])
        if kind is ModelKind.LOGNORMAL:
            return x[0], np.exp(x[1])
        if kind is ModelKind.GOMPERTZ:
            return np.exp(x[0]), x[1]
        return np.exp(x[0]), np.exp(x[1])


# ---------------------------------------------------------------------------
# functions of time
# ---------------------------------------------------------------------------

def survival(kind, params: ParamVector, t):
    """S(t) for ``t >= 0``; scalar in, float out."""
    kind = ModelKind.parse(kind)
    a, b = validate(kind, params)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("survival evaluated at negative time")
    out = np.exp(kernels.log_surv_np(kind.code, a, b, t_arr))
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def cumulative_hazard(kind, params: ParamVector, t):
    kind = ModelKind.parse(kind)
    a, b = validate(kind, params)
    out = -kernels.log_surv_np(kind.code, a, b, np.asarray(t, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def hazard(kind, params: ParamVector, t):
    """h(t); at ``t = 0`` the limiting value is returned (0, lam or inf)."""
    kind = ModelKind.parse(kind)
    a, b = validate(kind, params)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("hazard evaluated at negative time")
    pos = t_arr > 0
    safe_t = np.where(pos, t_arr, 1.0)
    with np.errstate(over="ignore"):
        out = np.exp(kernels.log_haz_np(kind.code, a, b, safe_t))
    if kind in (ModelKind.EXPONENTIAL, ModelKind.GOMPERTZ):
        at0 = a
    elif kind is ModelKind.LOGNORMAL:
        at0 = 0.0
    else:
        at0 = a if b == 1 else (0.0 if b > 1 else math.inf)
    out = np.where(pos, out, at0)
    return float(out) if out.ndim == 0 else out


def density(kind, params: ParamVector, t):
    return hazard(kind, params, t) * survival(kind, params, t)


def log_likelihood(kind, params: ParamVector, data: Dataset, backend=None) -> float:
    """Sum of event log-densities and censored log-survivals, minus log S(entry).

    Returns ``-inf`` rather than raising when a contribution is non-finite.
    """
    kind = ModelKind.parse(kind)
    if len(data) == 0:
        raise ValueError("log-likelihood of an empty dataset")
    a, b = validate(kind, params)
    return kernels.loglik(kind.code, a, b, data.time, data.entry, data.event, backend=backend)


def loglik_grid(kind, x_grid: np.ndarray, data: Dataset, chunk: int = 4096) -> np.ndarray:
    """Log-likelihood at many unconstrained points; ``x_grid`` is (m, k)."""
    kind = ModelKind.parse(kind)
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    out = np.empty(len(x_grid))
    t, entry, ev = data.time, data.entry, data.event
    for s in range(0, len(x_grid), chunk):
        xs = x_grid[s:s + chunk].T[:, :, None]
        a, b = _natural_from_x(kind, xs)
        terms = kernels.loglik_terms_np(kind.code, a, b, t[None, :], entry[None, :], ev[None, :])
        tot = terms.sum(axis=1)
        out[s:s + chunk] = np.where(np.isfinite(tot), tot, -np.inf)
    return out


# ---------------------------------------------------------------------------
# maximum likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParametricFit:
    kind: ModelKind
    params: ParamVector
    minus2LL: float
    aic: float
    bic: float
    covariance: np.ndarray
    n: int
    converged: bool
    x: np.ndarray

    @property
    def k(self) -> int:
        return self.kind.n_params

    def param_se(self) -> dict:
        """Delta-method standard errors of the natural parameters."""
        se = {}
        cov = self.covariance
        vals = self.params.as_dict()
        for i, name in enumerate(self.kind.param_names):
            v = cov[i, i]
            if not np.isfinite(v) or v < 0:
                se[name] = math.nan
                continue
            identity = name == "mu" or (self.kind is ModelKind.GOMPERTZ and name == "p")
            se[name] = math.sqrt(v) if identity else abs(vals[name]) * math.sqrt(v)
        return se


def _negloglik_fn(kind: ModelKind, data: Dataset, backend=None):
    code = kind.code
    t, entry, ev = data.time, data.entry, data.event
    w = np.ones_like(t)

    def f(x):
        a, b = _natural_from_x(kind, np.asarray(x, dtype=float))
        ll = kernels.loglik(code, a, b, t, entry, ev, w, backend=backend)
        return -ll if ll > -math.inf else math.inf

    return f


def _starts(kind: ModelKind, data: Dataset) -> list[np.ndarray]:
    t = data.time
    exposure = float(np.sum(data.time - data.entry))
    d = max(data.n_events, 1)
    rate = d / exposure
    try:
        med = median_survival(kaplan_meier(data))
    except ValueError:
        med = math.inf
    if not math.isfinite(med):
        med = 2.0 * float(t.max())
    med = max(med, 1e-8)
    logt = np.log(t[data.event]) if data.n_events > 1 else np.log(t)
    sd_log = float(np.std(logt)) or 1.0
    mean_t = float(np.mean(t))
    ln2 = math.log(2.0)
    if kind is ModelKind.EXPONENTIAL:
        cands = [(rate, None), (ln2 / med, None), (1.0 / mean_t, None)]
    elif kind is ModelKind.WEIBULL:
        cands = [(rate, 1.0), (ln2 / med, 1.0), (1.0 / mean_t, 1.0)]
    elif kind is ModelKind.LOGNORMAL:
        cands = [(float(np.mean(logt)), sd_log), (math.log(med), 1.0), (math.log(mean_t), 1.0)]
    elif kind is ModelKind.LOGLOGISTIC:
        p0 = max(math.pi / (math.sqrt(3.0) * sd_log), 0.1)
        cands = [(1.0 / math.exp(float(np.mean(logt))), p0), (1.0 / med, 1.0), (1.0 / mean_t, 1.0)]
    else:
        cands = [(rate, 0.0), (ln2 / med, 0.01), (1.0 / mean_t, 0.0)]
    starts = []
    for a, b in cands:
        if kind is ModelKind.EXPONENTIAL:
            starts.append(np.array([math.log(a)]))
        elif kind is ModelKind.LOGNORMAL:
            starts.append(np.array([a, math.log(b)]))
        elif kind is ModelKind.GOMPERTZ:
            starts.append(np.array([math.log(a), b]))
        else:
            starts.append(np.array([math.log(a), math.log(b)]))
    return starts


def numerical_hessian(f, x, rel_step=1e-4):
    x = np.asarray(x, dtype=float)
    k = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    H = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    return H


def numerical_gradient(f, x, rel_step=1e-6):
    x = np.asarray(x, dtype=float)
    h = rel_step * np.maximum(1.0, np.abs(x))
    g = []
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h[i]
        g.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h[i]))
    return np.array(g)


def _covariance(nll, x):
    H = numerical_hessian(nll, x)
    try:
        cov = np.linalg.inv(H)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(H)
    cov = 0.5 * (cov + cov.T)
    return cov


NM_OPTIONS = {"xatol": 1e-8, "fatol": np.inf, "maxiter": 2000}


def fit_mle(kind, data: Dataset, backend=None) -> ParametricFit:
    """Maximum-likelihood fit by multi-start Nelder-Mead.

    The exponential MLE is closed-form (events / exposure) and is computed
    directly.  Two-parameter models start from three deterministic points
    (moment-, median- and unit-based), keep the best optimum and restart the
    simplex there once.  ``converged`` reports whether the final simplex
    shrank below 1e-8 inside 2000 iterations.
    """
    kind = ModelKind.parse(kind)
    if len(data) == 0:
        raise FitError("cannot fit an empty dataset")
    if data.n_events == 0:
        raise FitError(f"{kind.value}: dataset has no events")
    if kind.n_params == 2 and np.unique(data.time).size < 2:
        raise FitError(f"{kind.value}: need at least two distinct times")
    nll = _negloglik_fn(kind, data, backend)
    if kind is ModelKind.EXPONENTIAL:
        exposure = float(np.sum(data.time - data.entry))
        x = np.array([math.log(data.n_events / exposure)])
        converged = True
    else:
        best = None
        for x0 in _starts(kind, data):
            if not math.isfinite(nll(x0)):
                continue
            res = optimize.minimize(nll, x0, method="Nelder-Mead", options=NM_OPTIONS)
            if best is None or res.fun < best.fun:
                best = res
        if best is None:
            raise FitError(f"{kind.value}: no start point has a finite likelihood")
        res = optimize.minimize(nll, best.x, method="Nelder-Mead", options=NM_OPTIONS)
        if res.fun > best.fun:
            res = best
        x = np.asarray(res.x, dtype=float)
        converged = bool(res.success)
    m2ll = 2.0 * nll(x)
    k = kind.n_params
    n = len(data)
    cov = _covariance(nll, x)
    if converged and np.any(np.linalg.eigvalsh(cov) < 0):
        converged = False
    return ParametricFit(kind, from_unconstrained(kind, x), m2ll, m2ll + 2 * k,
                         m2ll + k * math.log(n), cov, n, converged, x)


def fit_all(data: Dataset, kinds=ALL_KINDS, backend=None) -> list[ParametricFit]:
    return [fit_mle(k, data, backend=backend) for k in kinds]


def survival_from_x(kind: ModelKind, x, t):
    a, b = _natural_from_x(kind, np.asarray(x, dtype=float))
    return np.exp(kernels.log_surv_np(kind.code, a, b, np.asarray(t, dtype=float)))


def extrapolate(fit: ParametricFit, grid) -> SurvivalCurve:
    """Fitted survival on ``grid`` with delta-method pointwise SE."""
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0):
        raise ValueError("grid times must be non-negative")
    s = np.clip(survival_from_x(fit.kind, fit.x, grid), 0.0, 1.0)
    g = numerical_gradient(lambda x: survival_from_x(fit.kind, x, grid), fit.x)
    var = np.einsum("it,ij,jt->t", g, fit.covariance, g)
    se = np.sqrt(np.maximum(var, 0.0))
    return SurvivalCurve(grid, s, None, se)


def defective_limit(kind, params: ParamVector) -> float:
    """S(infinity): 0 except for Gompertz with negative shape."""
    kind = ModelKind.parse(kind)
    a, b = validate(kind, params)
    if kind is ModelKind.GOMPERTZ and b < 0:
        return math.exp(a / b)
    return 0.0


def simulate(kind, params: ParamVector, n: int, rng: np.random.Generator,
             censor_at: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` event times by inversion, optionally administratively censored."""
    kind = ModelKind.parse(kind)
    a, b = validate(kind, params)
    u = rng.uniform(size=n)
    e = -np.log(u)  # cumulative hazard draws
    if kind is ModelKind.EXPONENTIAL:
        t = e / a
    elif kind is ModelKind.WEIBULL:
        t = e ** (1.0 / b) / a
    elif kind is ModelKind.LOGNORMAL:
        from scipy import special

        t = np.exp(a + b * special.ndtri(1.0 - u))
    elif kind is ModelKind.LOGLOGISTIC:
        t = ((1.0 - u) / u) ** (1.0 / b) / a
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            arg = 1.0 + b * e / a
            t = np.where(arg > 0, np.log(np.where(arg > 0, arg, 1.0)) / b, np.inf) if b != 0 else e / a
    event = np.ones(n, dtype=bool)
    if censor_at is not None:
        event = t <= censor_at
        t = np.minimum(t, censor_at)
    return t, event
