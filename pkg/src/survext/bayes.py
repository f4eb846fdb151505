"""Random-walk Metropolis fits with power priors and long-term survival anchors.

Sampling happens on unconstrained coordinates ``x``:

============  =====================  ==========================
model         x                      survival
============  =====================  ==========================
lognormal     (mu, log tau)          1 - Phi((log t - mu) tau)
log-logistic  (mu, log tau)          1 / (1 + (t e^(-mu))^tau)
exponential   (log lam,)             exp(-lam t)
============  =====================  ==========================

``tau`` is a precision-type parameter (``sigma = 1/tau`` for the lognormal,
the shape for the log-logistic).  Priors are ``mu ~ N(mean, 1/precision)``
and ``tau ~ Gamma(shape, rate)``; note that the normal is specified by its
*precision*, so the default ``N(0, 0.01)`` has variance 100.  The
exponential model takes the gamma prior on ``lam`` and exists for checking
the sampler against the conjugate closed form.

Historical data enter the likelihood with weight ``alpha0`` (the power
prior).  A long-term anchor adds a normal log-density on ``S(t_obs)``
centred at ``s_obs`` with precision ``(1/var_obs)**alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

from . import kernels
from .dataset import Dataset, LongTermAnchor
from .metrics import DEFAULT_HORIZON, auc_natural
from .parametric import ModelKind, ParamVector, fit_mle, numerical_hessian

BAYES_KINDS = (ModelKind.LOGNORMAL, ModelKind.LOGLOGISTIC)
RHAT_LIMIT = 1.05


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    mu_mean: float = 0.0
    mu_precision: float = 0.01
    tau_shape: float = 0.001
    tau_rate: float = 0.001

    def __post_init__(self):
        if not self.mu_precision > 0:
            raise ValueError("mu prior precision must be positive")
        if not (self.tau_shape > 0 and self.tau_rate > 0):
            raise ValueError("gamma prior shape and rate must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.mu_mean, self.mu_precision, self.tau_shape, self.tau_rate])


@dataclass(frozen=True)
class PowerPriorSpec:
    historical: Dataset | None = None
    alpha0: float = 0.0
    anchor: LongTermAnchor | None = None

    def __post_init__(self):
        if not 0 <= self.alpha0 <= 2:
            raise ValueError("alpha0 must lie in [0, 2]")


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 4
    warmup: int = 5000
    kept: int = 5000
    thin: int = 1
    seed: int = 1
    adapt_every: int = 100

    def __post_init__(self):
        for name in ("chains", "kept", "thin", "adapt_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")


def _kind(kind) -> ModelKind:
    kind = ModelKind.parse(kind)
    if kind not in BAYES_KINDS + (ModelKind.EXPONENTIAL,):
        raise SamplerError(f"no Bayesian parameterisation for {kind.value}")
    return kind


def param_names(kind) -> tuple[str, ...]:
    kind = _kind(kind)
    return ("lam",) if kind is ModelKind.EXPONENTIAL else ("mu", "tau")


def to_x(kind, params: ParamVector) -> np.ndarray:
    """Sampler coordinates of a natural parameter vector."""
    kind = _kind(kind)
    if kind is ModelKind.EXPONENTIAL:
        return np.array([math.log(params.lam)])
    if kind is ModelKind.LOGNORMAL:
        return np.array([params.mu, -math.log(params.sigma)])
    return np.array([-math.log(params.lam), math.log(params.p)])


def from_x(kind, x) -> ParamVector:
    kind = _kind(kind)
    a, b = kernels.target_natural(kind.code, np.asarray(x, dtype=float))
    if kind is ModelKind.EXPONENTIAL:
        return ParamVector(lam=a)
    if kind is ModelKind.LOGNORMAL:
        return ParamVector(mu=a, sigma=b)
    return ParamVector(lam=a, p=b)


def _anchor_array(anchor: LongTermAnchor | None) -> np.ndarray:
    if anchor is None:
        return np.zeros(4)
    return np.array([1.0, anchor.t_obs, anchor.s_obs, anchor.precision])


def stacked_data(current: Dataset, spec: PowerPriorSpec):
    """Record arrays with power-prior weights; zero-weight records are dropped."""
    parts = [(current, 1.0)]
    if spec.historical is not None and spec.alpha0 > 0:
        parts.append((spec.historical, float(spec.alpha0)))
    t = np.concatenate([d.time for d, _ in parts])
    entry = np.concatenate([d.entry for d, _ in parts])
    event = np.concatenate([d.event for d, _ in parts])
    w = np.concatenate([np.full(len(d), a) for d, a in parts])
    return t, entry, event, w


class _Target:
    """Log posterior at unconstrained ``x`` for fixed data and priors."""

    def __init__(self, kind, current, spec, priors, backend=None):
        self.kind = _kind(kind)
        self.code = self.kind.code
        self.t, self.entry, self.event, self.w = stacked_data(current, spec)
        self.prior = priors.as_array()
        self.anchor = _anchor_array(spec.anchor)
        self.backend = kernels._resolve(backend)

    def __call__(self, x):
        return kernels.log_target(self.code, np.asarray(x, dtype=float), self.t, self.entry,
                                  self.event, self.w, self.prior, self.anchor, self.backend)

    def log_post(self, x) -> float:
        return self(x)[0]

    def deviance(self, x) -> float:
        ll = self(x)[1]
        return -2.0 * ll if math.isfinite(ll) else math.inf


def log_posterior(kind, params, current: Dataset, spec: PowerPriorSpec | None = None,
                  priors: PriorSpec | None = None, backend=None) -> float:
    """Unnormalised log posterior; ``-inf`` where it is not finite.

    ``params`` is a :class:`ParamVector` or an array of sampler coordinates.
    """
    spec = spec or PowerPriorSpec()
    priors = priors or PriorSpec()
    target = _Target(kind, current, spec, priors, backend)
    x = params if not isinstance(params, ParamVector) else to_x(target.kind, params)
    return target.log_post(x)


def _start_point(kind: ModelKind, current: Dataset, spec: PowerPriorSpec) -> np.ndarray:
    data = current
    if spec.historical is not None and spec.alpha0 > 0:
        data = current + spec.historical
    try:
        fit = fit_mle(kind, data)
        return to_x(kind, fit.params)
    except Exception:
        lt = np.log(data.time[data.event]) if data.n_events else np.log(data.time)
        if kind is ModelKind.EXPONENTIAL:
            return np.array([-float(np.mean(lt))])
        return np.array([float(np.mean(lt)), 0.0])


def posterior_mode(kind, current: Dataset, spec: PowerPriorSpec | None = None,
                   priors: PriorSpec | None = None, backend=None):
    """MAP on sampler coordinates and the Laplace covariance there."""
    spec = spec or PowerPriorSpec()
    priors = priors or PriorSpec()
    target = _Target(kind, current, spec, priors, backend)
    x0 = _start_point(target.kind, current, spec)

    def nlp(x):
        v = target.log_post(x)
        return -v if math.isfinite(v) else 1e300

    if not nlp(x0) < 1e300:
        raise SamplerError("log posterior is not finite at the starting point")
    opts = {"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000}
    res = optimize.minimize(nlp, x0, method="Nelder-Mead", options=opts)
    res = optimize.minimize(nlp, res.x, method="Nelder-Mead", options=opts)
    x = np.asarray(res.x, dtype=float)
    H = numerical_hessian(nlp, x)
    H = 0.5 * (H + H.T)
    try:
        cov = np.linalg.inv(H)
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = np.diag(1.0 / np.maximum(np.abs(np.diag(H)), 1e-8))
    return x, cov


# diagnostics ---------------------------------------------------------------

def split_rhat(chains: np.ndarray) -> float:
    """Split potential scale reduction for one parameter, ``chains`` shape (m, n)."""
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    if half < 2:
        return math.nan
    x = np.concatenate([chains[:, :half], chains[:, -half:]])
    means = x.mean(axis=1)
    W = float(np.mean(x.var(axis=1, ddof=1)))
    B = half * float(np.var(means, ddof=1))
    if W == 0:
        return 1.0 if B == 0 else math.inf
    var_plus = (half - 1) / half * W + B / half
    return math.sqrt(var_plus / W)


def _autocov(x):
    n = x.size
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n] / n
    return ac


def ess(chains: np.ndarray) -> float:
    """Multi-chain effective sample size with Geyer's monotone sequence."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    if n < 4:
        return math.nan
    acov = np.array([_autocov(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = float(np.mean(chain_var))
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += float(np.var(chains.mean(axis=1), ddof=1))
    if var_plus == 0:
        return float(m * n)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first negative pair and made monotone
    total = 0.0
    prev = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / math.log10(m * n + 10))
    return float(m * n / tau)


# samples -------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSample:
    """Pooled post-warm-up draws from all chains, chain-major."""

    kind: ModelKind
    draws: np.ndarray
    deviance_draws: np.ndarray
    dic: float
    pd: float
    chains: int
    seed: int
    acceptance: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray
    converged: bool
    deviance_fn: Callable = field(repr=False, compare=False)
    alpha0: float = 0.0
    alpha: float | None = None
    thin_step: int = 1
    report: dict = field(default_factory=dict, compare=False)

    @property
    def kept_per_chain(self) -> int:
        return self.draws.shape[0] // self.chains

    def chain_draws(self) -> np.ndarray:
        """Draws reshaped to (chains, kept, n_params)."""
        return self.draws.reshape(self.chains, self.kept_per_chain, -1)

    def natural_draws(self):
        """Kernel parameters ``(a, b)`` per draw (see ``kernels``)."""
        x = self.draws
        if self.kind is ModelKind.EXPONENTIAL:
            return np.exp(x[:, 0]), np.zeros(len(x))
        if self.kind is ModelKind.LOGNORMAL:
            return x[:, 0].copy(), np.exp(-x[:, 1])
        return np.exp(-x[:, 0]), np.exp(x[:, 1])

    def param_draws(self) -> np.ndarray:
        """Draws of the named parameters (``mu, tau`` or ``lam``)."""
        if self.kind is ModelKind.EXPONENTIAL:
            return np.exp(self.draws)
        return np.column_stack([self.draws[:, 0], np.exp(self.draws[:, 1])])

    def mean(self) -> np.ndarray:
        return self.param_draws().mean(axis=0)

    def mcse(self) -> np.ndarray:
        """Monte Carlo SE of the posterior mean of each named parameter."""
        pd = self.param_draws()
        cd = pd.reshape(self.chains, self.kept_per_chain, -1)
        e = np.array([ess(cd[:, :, j]) for j in range(pd.shape[1])])
        return pd.std(axis=0, ddof=1) / np.sqrt(e)

    def survival_draws(self, t) -> np.ndarray:
        a, b = self.natural_draws()
        t = np.asarray(t, dtype=float)
        return np.exp(kernels.log_surv_np(self.kind.code, a[:, None], b[:, None], np.atleast_1d(t)))

    def thin(self, k: int) -> "PosteriorSample":
        """Every ``k``-th draw of each chain, with DIC recomputed."""
        if k < 1:
            raise ValueError("thinning step must be at least 1")
        cd = self.chain_draws()[:, ::k, :]
        dv = self.deviance_draws.reshape(self.chains, -1)[:, ::k]
        return _assemble(self.kind, cd, dv, self.seed, self.acceptance, self.deviance_fn,
                         self.alpha0, self.alpha, self.thin_step * k)


def dic(sample: PosteriorSample) -> tuple[float, float]:
    """(DIC, pD) with the deviance evaluated at the mean of the sampler coordinates."""
    if len(sample.deviance_draws) < 2:
        raise ValueError("DIC needs at least two draws")
    return _dic(sample.draws, sample.deviance_draws, sample.deviance_fn)


def _dic(draws, dev, deviance_fn):
    dbar = float(np.mean(dev))
    if np.all(draws == draws[0]):
        xbar = draws[0]
    else:
        xbar = draws.mean(axis=0)
    pd = dbar - float(deviance_fn(xbar))
    return dbar + pd, pd


def _assemble(kind, chain_draws, chain_dev, seed, acceptance, deviance_fn, alpha0, alpha, thin):
    m, n, d = chain_draws.shape
    draws = chain_draws.reshape(m * n, d)
    dev = chain_dev.reshape(m * n)
    dic_v, pd = _dic(draws, dev, deviance_fn) if m * n >= 2 else (math.nan, math.nan)
    rhat = np.array([split_rhat(chain_draws[:, :, j]) for j in range(d)])
    e = np.array([ess(chain_draws[:, :, j]) for j in range(d)])
    converged = bool(np.all(np.nan_to_num(rhat, nan=np.inf) <= RHAT_LIMIT))
    for arr in (draws, dev):
        arr.setflags(write=False)
    return PosteriorSample(kind, draws, dev, dic_v, pd, m, seed, np.asarray(acceptance), rhat, e,
                           converged, deviance_fn, alpha0, alpha, thin)


def chain_inputs(config: McmcConfig, chain: int, dim: int, x_map, chol):
    """Initial point and pre-drawn randomness for one chain.

    Each chain owns the stream ``default_rng([seed, chain])``; the start is
    the mode plus a draw from twice the Laplace spread.
    """
    rng = np.random.default_rng([config.seed, chain])
    x0 = x_map + 2.0 * chol @ rng.standard_normal(dim)
    n_iter = config.warmup + config.kept * config.thin
    z = rng.standard_normal((n_iter, dim))
    logu = np.log(rng.random(n_iter))
    return x0, z, logu


def sample(kind, current: Dataset, spec: PowerPriorSpec | None = None,
           priors: PriorSpec | None = None, config: McmcConfig | None = None,
           backend=None) -> PosteriorSample:
    """Adaptive random-walk Metropolis draws from the posterior.

    Proposals are Gaussian with the Laplace covariance at the mode, scaled
    per chain; the scale adapts every ``adapt_every`` warm-up iterations
    towards an acceptance rate in [0.25, 0.45] and is frozen afterwards.
    A split R-hat above 1.05 on any parameter marks the sample as not
    converged.
    """
    spec = spec or PowerPriorSpec()
    priors = priors or PriorSpec()
    config = config or McmcConfig()
    if current.n_events < 1:
        raise SamplerError("current data need at least one event")
    target = _Target(kind, current, spec, priors, backend)
    x_map, cov = posterior_mode(target.kind, current, spec, priors, backend)
    chol = np.linalg.cholesky(cov)
    dim = x_map.size
    scale0 = 2.38 / math.sqrt(dim)
    draws, devs, acc = [], [], []
    for c in range(config.chains):
        x0, z, logu = chain_inputs(config, c, dim, x_map, chol)
        if not math.isfinite(target.log_post(x0)):
            x0 = x_map.copy()
        d, _, ll, _, _, acc_s = kernels.rwm_chain(
            target.code, target.t, target.entry, target.event, target.w, target.prior,
            target.anchor, x0, chol, scale0, z, logu, config.warmup, config.thin,
            config.adapt_every, target.backend)
        draws.append(d)
        devs.append(-2.0 * ll)
        acc.append(acc_s / (config.kept * config.thin))
    anchor_alpha = spec.anchor.alpha if spec.anchor is not None else None
    return _assemble(target.kind, np.stack(draws), np.stack(devs), config.seed, acc,
                     target.deviance, spec.alpha0, anchor_alpha, config.thin)


def constrained_fit(kind, current: Dataset, anchor: LongTermAnchor, alpha_grid: Sequence[float],
                    priors: PriorSpec | None = None, config: McmcConfig | None = None,
                    historical: Dataset | None = None, alpha0: float = 0.0,
                    horizon: float = DEFAULT_HORIZON, backend=None) -> list[PosteriorSample]:
    """One anchored posterior per alpha.

    Each sample's ``report`` holds the posterior mean and SD of the
    restricted AUC up to ``horizon`` and of ``S(t_obs)``, plus a Monte Carlo
    SE for the latter SD.
    """
    out = []
    for a in alpha_grid:
        if not 0.001 <= a <= 2:
            raise ValueError(f"alpha {a} outside [0.001, 2]")
        spec = PowerPriorSpec(historical, alpha0, replace(anchor, alpha=float(a)))
        s = sample(kind, current, spec, priors, config, backend)
        s.report.update(summarize_anchor(s, anchor.t_obs, horizon))
        s.report["alpha"] = float(a)
        out.append(s)
    return out


def summarize_anchor(s: PosteriorSample, t_obs: float, horizon: float = DEFAULT_HORIZON) -> dict:
    a, b = s.natural_draws()
    auc = auc_natural(s.kind, a, b, horizon)
    surv = s.survival_draws(t_obs)[:, 0]
    e = ess(surv.reshape(s.chains, -1))
    sd = float(np.std(surv, ddof=1))
    return {
        "auc_mean": float(np.mean(auc)),
        "auc_sd": float(np.std(auc, ddof=1)),
        "s_obs_mean": float(np.mean(surv)),
        "s_obs_sd": sd,
        "s_obs_sd_mcse": sd / math.sqrt(2.0 * e),
        "s_obs_mean_mcse": sd / math.sqrt(e),
    }


def posterior_mean_curve(s: PosteriorSample, grid) -> np.ndarray:
    return s.survival_draws(grid).mean(axis=0)


def curve_kl(s_p, s_q) -> float:
    """KL divergence between the event-time distributions of two curves on a grid.

    Each curve is turned into probabilities by its decrements over the grid
    plus the mass surviving past the last grid time.
    """
    def masses(s):
        s = np.asarray(s, dtype=float)
        p = np.concatenate((-np.diff(np.concatenate(([1.0], s))), [s[-1]]))
        return np.clip(p, 1e-300, None)

    p, q = masses(s_p), masses(s_q)
    return float(np.sum(p * np.log(p / q)))


def conjugate_exponential(current: Dataset, priors: PriorSpec) -> tuple[float, float]:
    """Shape and rate of the gamma posterior of an exponential rate."""
    exposure = float(np.sum(current.time - current.entry))
    return priors.tau_shape + current.n_events, priors.tau_rate + exposure
