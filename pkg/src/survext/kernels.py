"""Hot numeric kernels.

Two things dominate runtime: summing per-record log-likelihood contributions of
a parametric survival model, and the random-walk Metropolis loop that calls it
tens of thousands of times per chain.  Both exist twice, as numba ``@njit``
kernels and as plain numpy code.  The numba path is used when numba imports and
the environment variable ``SURVEXT_DISABLE_NUMBA`` is not set to a true value.

Model codes and natural parameters ``(a, b)``:

=========== ==== ==========================================
EXPONENTIAL 0    ``a`` = rate lambda, ``b`` unused
WEIBULL     1    ``a`` = lambda, ``b`` = shape p
LOGNORMAL   2    ``a`` = mu (log-time location), ``b`` = sigma
LOGLOGISTIC 3    ``a`` = lambda, ``b`` = shape p
GOMPERTZ    4    ``a`` = lambda (hazard at 0), ``b`` = p
=========== ==== ==========================================
"""

import math
import os

import numpy as np
from scipy import special

EXPONENTIAL, WEIBULL, LOGNORMAL, LOGLOGISTIC, GOMPERTZ = 0, 1, 2, 3, 4

_LOG_2PI = math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)
# below this |p| the Gompertz cumulative hazard is evaluated as lambda * t
_GOMPERTZ_P_EPS = 1e-12

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _env_disabled():
    return os.environ.get("SURVEXT_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


def default_backend():
    return "numba" if USE_NUMBA else "numpy"


def _resolve(backend):
    backend = backend or default_backend()
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


if HAVE_NUMBA:
    njit = numba.njit(cache=True, nogil=True)
else:  # pragma: no cover
    def njit(f):
        return f


# ---------------------------------------------------------------------------
# numpy versions (broadcasting over parameter grids and data)
# ---------------------------------------------------------------------------

def log_surv_np(kind, a, b, t):
    """log S(t), broadcasting ``a``, ``b`` and ``t``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind == EXPONENTIAL:
            return -a * t
        if kind == WEIBULL:
            return -((a * t) ** b)
        if kind == LOGNORMAL:
            z = (np.log(t) - a) / b
            return special.log_ndtr(-z)
        if kind == LOGLOGISTIC:
            return -np.log1p((a * t) ** b)
        if kind == GOMPERTZ:
            small = np.abs(b) < _GOMPERTZ_P_EPS
            b_safe = np.where(small, 1.0, b)
            return -np.where(small, a * t, a * np.expm1(b_safe * t) / b_safe)
    raise ValueError(f"unknown model code {kind}")


def log_haz_np(kind, a, b, t):
    """log h(t) for t > 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if kind == EXPONENTIAL:
            return np.log(a) + np.zeros_like(t)
        if kind == WEIBULL:
            return np.log(a * b) + (b - 1.0) * np.log(a * t)
        if kind == LOGNORMAL:
            z = (np.log(t) - a) / b
            return -0.5 * z * z - 0.5 * _LOG_2PI - np.log(t * b) - special.log_ndtr(-z)
        if kind == LOGLOGISTIC:
            return np.log(a * b) + (b - 1.0) * np.log(a * t) - np.log1p((a * t) ** b)
        if kind == GOMPERTZ:
            return np.log(a) + b * t
    raise ValueError(f"unknown model code {kind}")


def loglik_terms_np(kind, a, b, t, entry, event):
    """Per-record contributions event*log h(t) + log S(t) - log S(entry)."""
    event = np.asarray(event, dtype=bool)
    lh = log_haz_np(kind, a, b, t)
    ls = log_surv_np(kind, a, b, t)
    ls0 = log_surv_np(kind, a, b, entry)
    return np.where(event, lh, 0.0) + ls - ls0


def _loglik_np(kind, a, b, t, entry, event, w):
    terms = loglik_terms_np(kind, a, b, t, entry, event)
    total = float(np.sum(w * terms))
    if not math.isfinite(total):
        return -math.inf
    return total


# ---------------------------------------------------------------------------
# numba versions (scalar loops)
# ---------------------------------------------------------------------------

@njit
def _log_norm_sf_nb(z):
    # log(1 - Phi(z)) without cancellation in either tail
    if z < 0.0:
        return math.log1p(-0.5 * math.erfc(-z / _SQRT2))
    if z < 37.0:
        return math.log(0.5 * math.erfc(z / _SQRT2))
    z2 = 1.0 / (z * z)
    series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2 * (1.0 - 7.0 * z2)))
    return -0.5 * z * z - math.log(z) - 0.5 * _LOG_2PI + math.log(series)


@njit
def _log_surv_nb(kind, a, b, t):
    if kind == EXPONENTIAL:
        return -a * t
    if kind == WEIBULL:
        return -((a * t) ** b)
    if kind == LOGNORMAL:
        if t <= 0.0:
            return 0.0
        return _log_norm_sf_nb((math.log(t) - a) / b)
    if kind == LOGLOGISTIC:
        return -math.log1p((a * t) ** b)
    # GOMPERTZ
    if abs(b) < _GOMPERTZ_P_EPS:
        return -a * t
    return -a * math.expm1(b * t) / b


@njit
def _log_haz_nb(kind, a, b, t):
    if kind == EXPONENTIAL:
        return math.log(a)
    if kind == WEIBULL:
        return math.log(a * b) + (b - 1.0) * math.log(a * t)
    if kind == LOGNORMAL:
        z = (math.log(t) - a) / b
        return -0.5 * z * z - 0.5 * _LOG_2PI - math.log(t * b) - _log_norm_sf_nb(z)
    if kind == LOGLOGISTIC:
        return math.log(a * b) + (b - 1.0) * math.log(a * t) - math.log1p((a * t) ** b)
    return math.log(a) + b * t


@njit
def _loglik_nb(kind, a, b, t, entry, event, w):
    total = 0.0
    for i in range(t.shape[0]):
        c = _log_surv_nb(kind, a, b, t[i])
        if event[i]:
            c += _log_haz_nb(kind, a, b, t[i])
        if entry[i] > 0.0:
            c -= _log_surv_nb(kind, a, b, entry[i])
        total += w[i] * c
    if not math.isfinite(total):
        return -math.inf
    return total


def loglik(kind, a, b, t, entry, event, w=None, backend=None):
    """Weighted total log-likelihood; ``-inf`` when any contribution is non-finite."""
    t = np.ascontiguousarray(t, dtype=float)
    entry = np.ascontiguousarray(entry, dtype=float)
    event = np.ascontiguousarray(event, dtype=np.bool_)
    w = np.ones_like(t) if w is None else np.ascontiguousarray(w, dtype=float)
    a = float(a)
    b = float(b)
    if not (math.isfinite(a) and math.isfinite(b)):
        return -math.inf
    if _resolve(backend) == "numba":
        return float(_loglik_nb(kind, a, b, t, entry, event, w))
    return _loglik_np(kind, a, b, t, entry, event, w)


# ---------------------------------------------------------------------------
# Bayesian log target on the unconstrained scale
# ---------------------------------------------------------------------------
# prior layout: [mu_mean, mu_precision, gamma_shape, gamma_rate]
#   EXPONENTIAL: x = [log lambda], lambda ~ Gamma(shape, rate)
#   LOGNORMAL / LOGLOGISTIC: x = [mu, log tau], mu ~ N(mean, 1/precision),
#   tau ~ Gamma(shape, rate); lognormal sigma = 1/tau, log-logistic
#   lambda = exp(-mu), p = tau.
# anchor layout: [present, t_obs, s_obs, precision]


def target_natural(kind, x):
    """Map unconstrained Bayesian coordinates to natural kernel parameters."""
    if kind == EXPONENTIAL:
        return math.exp(x[0]), 0.0
    if kind == LOGNORMAL:
        return float(x[0]), math.exp(-x[1])
    if kind == LOGLOGISTIC:
        return math.exp(-x[0]), math.exp(x[1])
    raise ValueError(f"model code {kind} has no Bayesian parameterisation")


def _log_prior_py(kind, x, prior):
    if kind == EXPONENTIAL:
        return prior[2] * x[0] - prior[3] * math.exp(x[0])
    d = x[0] - prior[0]
    return -0.5 * prior[1] * d * d + prior[2] * x[1] - prior[3] * math.exp(x[1])


def _anchor_py(kind, a, b, anchor):
    if anchor[0] == 0.0:
        return 0.0
    s = math.exp(float(log_surv_np(kind, a, b, anchor[1])))
    d = s - anchor[2]
    return 0.5 * math.log(anchor[3]) - 0.5 * _LOG_2PI - 0.5 * anchor[3] * d * d


def log_target_np(kind, x, t, entry, event, w, prior, anchor):
    """(log posterior, log-likelihood part) at unconstrained ``x`` (numpy path)."""
    if not np.all(np.isfinite(x)):
        return -math.inf, -math.inf
    with np.errstate(over="ignore"):
        try:
            a, b = target_natural(kind, x)
        except OverflowError:
            return -math.inf, -math.inf
    if not (math.isfinite(a) and math.isfinite(b)) or (kind != EXPONENTIAL and b == 0.0):
        return -math.inf, -math.inf
    ll = _loglik_np(kind, a, b, t, entry, event, w)
    if ll == -math.inf:
        return -math.inf, -math.inf
    ll += _anchor_py(kind, a, b, anchor)
    lp = ll + _log_prior_py(kind, x, prior)
    if not math.isfinite(lp):
        return -math.inf, -math.inf
    return lp, ll


@njit
def _log_target_nb(kind, x, t, entry, event, w, prior, anchor):
    for j in range(x.shape[0]):
        if not math.isfinite(x[j]):
            return -math.inf, -math.inf
    if kind == EXPONENTIAL:
        if x[0] > 700.0:
            return -math.inf, -math.inf
        a = math.exp(x[0])
        b = 0.0
        lprior = prior[2] * x[0] - prior[3] * a
    else:
        if abs(x[1]) > 700.0 or (kind == LOGLOGISTIC and abs(x[0]) > 700.0):
            return -math.inf, -math.inf
        tau = math.exp(x[1])
        if kind == LOGNORMAL:
            a = x[0]
            b = 1.0 / tau
        else:
            a = math.exp(-x[0])
            b = tau
        d = x[0] - prior[0]
        lprior = -0.5 * prior[1] * d * d + prior[2] * x[1] - prior[3] * tau
    ll = _loglik_nb(kind, a, b, t, entry, event, w)
    if ll == -math.inf:
        return -math.inf, -math.inf
    if anchor[0] != 0.0:
        s = math.exp(_log_surv_nb(kind, a, b, anchor[1]))
        dd = s - anchor[2]
        ll += 0.5 * math.log(anchor[3]) - 0.5 * _LOG_2PI - 0.5 * anchor[3] * dd * dd
    lp = ll + lprior
    if not math.isfinite(lp):
        return -math.inf, -math.inf
    return lp, ll


def log_target(kind, x, t, entry, event, w, prior, anchor, backend=None):
    x = np.ascontiguousarray(x, dtype=float)
    if _resolve(backend) == "numba":
        lp, ll = _log_target_nb(kind, x, t, entry, event, w, prior, anchor)
        return float(lp), float(ll)
    return log_target_np(kind, x, t, entry, event, w, prior, anchor)


# ---------------------------------------------------------------------------
# random-walk Metropolis chain
# ---------------------------------------------------------------------------
# Adaptation: during warm-up the global step scale is multiplied by
# exp(3 * (rate - 0.35)) after every batch of `adapt_every` iterations whose
# acceptance rate falls outside [0.25, 0.45]; frozen afterwards.

_ACC_LO = 0.25
_ACC_HI = 0.45
_ACC_TARGET = 0.35


@njit
def _adapt_scale_nb(scale, rate):
    if rate < _ACC_LO or rate > _ACC_HI:
        return scale * math.exp(3.0 * (rate - _ACC_TARGET))
    return scale


@njit
def _rwm_nb(kind, t, entry, event, w, prior, anchor, x0, chol, scale0, z, logu,
            n_warmup, thin, adapt_every):
    n_iter = z.shape[0]
    d = z.shape[1]
    n_keep = (n_iter - n_warmup) // thin
    draws = np.empty((n_keep, d))
    lp_keep = np.empty(n_keep)
    ll_keep = np.empty(n_keep)
    x = x0.copy()
    prop = np.empty(d)
    lp, ll = _log_target_nb(kind, x, t, entry, event, w, prior, anchor)
    scale = scale0
    acc_batch = 0
    acc_warm = 0
    acc_samp = 0
    k = 0
    for i in range(n_iter):
        for r in range(d):
            s = 0.0
            for c in range(r + 1):
                s += chol[r, c] * z[i, c]
            prop[r] = x[r] + scale * s
        lpp, llp = _log_target_nb(kind, prop, t, entry, event, w, prior, anchor)
        if lpp > -math.inf and logu[i] < lpp - lp:
            for r in range(d):
                x[r] = prop[r]
            lp = lpp
            ll = llp
            accepted = 1
        else:
            accepted = 0
        if i < n_warmup:
            acc_warm += accepted
            acc_batch += accepted
            if (i + 1) % adapt_every == 0:
                scale = _adapt_scale_nb(scale, acc_batch / adapt_every)
                acc_batch = 0
        else:
            acc_samp += accepted
            if (i - n_warmup + 1) % thin == 0:
                for r in range(d):
                    draws[k, r] = x[r]
                lp_keep[k] = lp
                ll_keep[k] = ll
                k += 1
    return draws, lp_keep, ll_keep, scale, acc_warm, acc_samp


def _rwm_np(kind, t, entry, event, w, prior, anchor, x0, chol, scale0, z, logu,
            n_warmup, thin, adapt_every):
    n_iter, d = z.shape
    n_keep = (n_iter - n_warmup) // thin
    draws = np.empty((n_keep, d))
    lp_keep = np.empty(n_keep)
    ll_keep = np.empty(n_keep)
    x = x0.copy()
    lp, ll = log_target_np(kind, x, t, entry, event, w, prior, anchor)
    scale = scale0
    acc_batch = acc_warm = acc_samp = 0
    k = 0
    steps = z @ chol.T
    for i in range(n_iter):
        prop = x + scale * steps[i]
        lpp, llp = log_target_np(kind, prop, t, entry, event, w, prior, anchor)
        accepted = lpp > -math.inf and logu[i] < lpp - lp
        if accepted:
            x, lp, ll = prop, lpp, llp
        if i < n_warmup:
            acc_warm += accepted
            acc_batch += accepted
            if (i + 1) % adapt_every == 0:
                rate = acc_batch / adapt_every
                if rate < _ACC_LO or rate > _ACC_HI:
                    scale *= math.exp(3.0 * (rate - _ACC_TARGET))
                acc_batch = 0
        else:
            acc_samp += accepted
            if (i - n_warmup + 1) % thin == 0:
                draws[k] = x
                lp_keep[k] = lp
                ll_keep[k] = ll
                k += 1
    return draws, lp_keep, ll_keep, scale, acc_warm, acc_samp


def rwm_chain(kind, t, entry, event, w, prior, anchor, x0, chol, scale0, z, logu,
              n_warmup, thin=1, adapt_every=100, backend=None):
    """Run one random-walk Metropolis chain on pre-drawn randomness.

    ``z`` holds one standard-normal row per iteration and ``logu`` the log
    uniforms for the accept step, so the chain is a pure function of its
    inputs.  Returns kept draws, their log posterior and log-likelihood
    values, the final step scale and accept counts for warm-up and sampling.
    """
    args = (
        int(kind),
        np.ascontiguousarray(t, dtype=float),
        np.ascontiguousarray(entry, dtype=float),
        np.ascontiguousarray(event, dtype=np.bool_),
        np.ascontiguousarray(w, dtype=float),
        np.ascontiguousarray(prior, dtype=float),
        np.ascontiguousarray(anchor, dtype=float),
        np.ascontiguousarray(x0, dtype=float),
        np.ascontiguousarray(chol, dtype=float),
        float(scale0),
        np.ascontiguousarray(z, dtype=float),
        np.ascontiguousarray(logu, dtype=float),
        int(n_warmup),
        int(thin),
        int(adapt_every),
    )
    if _resolve(backend) == "numba":
        draws, lp, ll, scale, aw, asamp = _rwm_nb(*args)
    else:
        draws, lp, ll, scale, aw, asamp = _rwm_np(*args)
    return draws, lp, ll, float(scale), int(aw), int(asamp)
