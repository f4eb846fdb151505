import math

import numpy as np
import pytest
from scipy import optimize

from survext import bayes
from survext.bayes import McmcConfig, PowerPriorSpec, PriorSpec
from survext.dataset import Dataset, LongTermAnchor
from survext.parametric import ModelKind, ParamVector
from conftest import make_data

K = ModelKind
SMALL = McmcConfig(chains=2, warmup=500, kept=1000, seed=3)


@pytest.fixture(scope="module")
def current():
    return make_data(n=150, seed=10)


@pytest.fixture(scope="module")
def historical():
    return make_data(n=80, seed=11, entry=None)


def random_x(rng, n=100):
    return np.column_stack([rng.uniform(1.0, 4.0, n), rng.uniform(-1.0, 1.0, n)])


@pytest.mark.parametrize("kind", bayes.BAYES_KINDS)
def test_power_prior_pooled_identity(kind, current, historical, backend):
    pooled = current + historical
    for x in random_x(np.random.default_rng(0)):
        a = bayes.log_posterior(kind, x, current, PowerPriorSpec(historical, 1.0), backend=backend)
        b = bayes.log_posterior(kind, x, pooled, PowerPriorSpec(), backend=backend)
        assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


@pytest.mark.parametrize("kind", bayes.BAYES_KINDS)
def test_power_prior_zero_weight(kind, current, historical):
    for x in random_x(np.random.default_rng(1), 20):
        a = bayes.log_posterior(kind, x, current, PowerPriorSpec(historical, 0.0))
        assert a == bayes.log_posterior(kind, x, current, PowerPriorSpec())


def test_log_posterior_decomposition(current):
    # prior + likelihood computed independently
    from survext.parametric import log_likelihood
    x = np.array([2.3, 0.1])
    mu, tau = x[0], math.exp(x[1])
    ll = log_likelihood(K.LOGNORMAL, ParamVector(mu=mu, sigma=1 / tau), current)
    # unnormalised: N(0, precision 0.01) on mu, Gamma(0.001, 0.001) on tau with the log-tau Jacobian
    lp_mu = -0.5 * 0.01 * mu ** 2
    lp_tau = 0.001 * x[1] - 0.001 * tau
    got = bayes.log_posterior(K.LOGNORMAL, x, current)
    assert got == pytest.approx(ll + lp_mu + lp_tau, rel=1e-12)


def test_anchor_term(current):
    x = np.array([2.4, -0.1])
    anchor = LongTermAnchor(80.0, 0.35, 0.01, 1.5)
    base = bayes.log_posterior(K.LOGNORMAL, x, current)
    with_a = bayes.log_posterior(K.LOGNORMAL, x, current, PowerPriorSpec(anchor=anchor))
    from survext.parametric import survival
    s = survival(K.LOGNORMAL, bayes.from_x(K.LOGNORMAL, x), 80.0)
    prec = 100.0 ** 1.5
    expect = 0.5 * math.log(prec / (2 * math.pi)) - 0.5 * prec * (s - 0.35) ** 2
    assert with_a - base == pytest.approx(expect, rel=1e-10)


def test_anchor_forces_mode_exponential():
    d = Dataset.from_arrays([2.0, 5.0, 9.0, 12.0, 20.0], [True] * 5)
    gaps = []
    for var, alpha in ((0.01, 0.001), (0.01, 1.0), (1e-4, 2.0)):
        spec = PowerPriorSpec(anchor=LongTermAnchor(30.0, 0.5, var, alpha))
        x_map, _ = bayes.posterior_mode(K.EXPONENTIAL, d, spec)
        # independent penalised optimum by bounded scalar search
        res = optimize.minimize_scalar(
            lambda u: -bayes.log_posterior(K.EXPONENTIAL, np.array([u]), d, spec),
            bounds=(-8.0, 1.0), method="bounded", options={"xatol": 1e-10})
        assert x_map[0] == pytest.approx(res.x, abs=1e-5)
        gaps.append(abs(math.exp(-30.0 * math.exp(x_map[0])) - 0.5))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_conjugate_exponential(current):
    priors = PriorSpec()
    s = bayes.sample(K.EXPONENTIAL, current, priors=priors, config=McmcConfig(seed=5))
    a, b = bayes.conjugate_exponential(current, priors)
    assert abs(s.mean()[0] - a / b) < 3 * s.mcse()[0]
    assert s.rhat[0] < 1.01


def test_determinism_and_backends(current):
    a = bayes.sample(K.LOGNORMAL, current, config=SMALL)
    b = bayes.sample(K.LOGNORMAL, current, config=SMALL)
    assert np.array_equal(a.draws, b.draws) and a.dic == b.dic
    c = bayes.sample(K.LOGNORMAL, current, config=McmcConfig(chains=2, warmup=500, kept=1000, seed=4))
    assert not np.array_equal(a.draws, c.draws)


def test_backend_parity(current):
    from survext import kernels
    if not kernels.HAVE_NUMBA:
        pytest.skip("numba not installed")
    a = bayes.sample(K.LOGLOGISTIC, current, config=SMALL, backend="numpy")
    b = bayes.sample(K.LOGLOGISTIC, current, config=SMALL, backend="numba")
    # the modes differ only by optimizer round-off, so the paths coincide closely
    np.testing.assert_allclose(a.draws, b.draws, rtol=0, atol=1e-6)


def test_sample_structure(current):
    s = bayes.sample(K.LOGLOGISTIC, current, config=SMALL)
    assert s.draws.shape == (2000, 2) and s.deviance_draws.shape == (2000,)
    assert s.chain_draws().shape == (2, 1000, 2)
    assert np.all((s.acceptance > 0.15) & (s.acceptance < 0.6))
    a, b = s.natural_draws()
    assert np.all(a > 0) and np.all(b > 0)
    d, pd = bayes.dic(s)
    assert d == pytest.approx(float(np.mean(s.deviance_draws)) + pd)
    assert pd == pytest.approx(float(np.mean(s.deviance_draws)) - s.deviance_fn(s.draws.mean(axis=0)))


def test_degenerate_dic(current):
    s = bayes.sample(K.LOGNORMAL, current, config=SMALL)
    x = s.draws[:1].repeat(10, axis=0)
    dev = np.full(10, s.deviance_fn(x[0]))
    cd = x.reshape(2, 5, 2)
    flat = bayes._assemble(K.LOGNORMAL, cd, dev.reshape(2, 5), 1, [0, 0], s.deviance_fn, 0.0, None, 1)
    assert flat.pd == 0.0 and flat.dic == dev[0]


def test_gaussian_pd():
    d = make_data(n=600, seed=21, censor=None)
    s = bayes.sample(K.LOGNORMAL, d, config=McmcConfig(chains=4, warmup=1000, kept=3000, seed=2))
    assert abs(s.pd - 2.0) <= 0.2


def test_thinning_dic(current):
    s = bayes.sample(K.LOGNORMAL, current, config=McmcConfig(chains=4, warmup=1000, kept=4000, seed=8))
    t2 = s.thin(2)
    assert t2.draws.shape[0] == s.draws.shape[0] // 2
    sd = float(np.std(s.deviance_draws)) / math.sqrt(s.ess.min())
    assert abs(t2.dic - s.dic) < 4 * sd


def test_mcse_scaling(current):
    small = bayes.sample(K.LOGNORMAL, current, config=McmcConfig(chains=4, warmup=1000, kept=2000, seed=6))
    big = bayes.sample(K.LOGNORMAL, current, config=McmcConfig(chains=4, warmup=1000, kept=4000, seed=6))
    ratio = big.mcse() / small.mcse()
    # square-root law: expected 1/sqrt(2) = 0.707
    assert np.all((ratio > 0.5) & (ratio < 0.95))


def test_minimal_alpha_matches_unconstrained(current):
    cfg = McmcConfig(chains=4, warmup=1000, kept=3000, seed=9)
    anchor = LongTermAnchor(80.0, 0.35, 0.01)
    con = bayes.constrained_fit(K.LOGNORMAL, current, anchor, [0.001], config=cfg)[0]
    free = bayes.sample(K.LOGNORMAL, current, config=cfg)
    grid = np.linspace(0, 120, 241)
    kl = bayes.curve_kl(bayes.posterior_mean_curve(con, grid), bayes.posterior_mean_curve(free, grid))
    assert kl < 1e-3


def test_constrained_report(current):
    anchor = LongTermAnchor(80.0, 0.35, 0.01)
    out = bayes.constrained_fit(K.LOGLOGISTIC, current, anchor, [0.001, 2.0], config=SMALL)
    assert [s.report["alpha"] for s in out] == [0.001, 2.0]
    for s in out:
        assert {"auc_mean", "auc_sd", "s_obs_mean", "s_obs_sd"} <= set(s.report)
        assert 0 < s.report["auc_mean"] < 72
    assert abs(out[1].report["s_obs_mean"] - 0.35) < abs(out[0].report["s_obs_mean"] - 0.35)
    with pytest.raises(ValueError):
        bayes.constrained_fit(K.LOGNORMAL, current, anchor, [3.0], config=SMALL)


def test_sd_monotone_under_moderate_conflict():
    # data whose S(80) is near the anchor: SD shrinks as alpha grows
    d = make_data(params=ParamVector(mu=math.log(40.0), sigma=1.2), n=150, seed=12)
    anchor = LongTermAnchor(80.0, 0.35, 0.01)
    out = bayes.constrained_fit(K.LOGNORMAL, d, anchor, [0.001, 1.0, 2.0],
                                config=McmcConfig(chains=4, warmup=1000, kept=3000, seed=1))
    sd = [s.report["s_obs_sd"] for s in out]
    mc = [s.report["s_obs_sd_mcse"] for s in out]
    for i in range(len(sd) - 1):
        assert sd[i + 1] <= sd[i] + 2 * math.hypot(mc[i], mc[i + 1])


def test_rhat_and_ess():
    rng = np.random.default_rng(0)
    good = rng.standard_normal((4, 2000))
    assert bayes.split_rhat(good) < 1.01
    assert bayes.ess(good) == pytest.approx(8000, rel=0.15)
    bad = good + np.arange(4)[:, None]
    assert bayes.split_rhat(bad) > 1.5


def test_spec_validation():
    with pytest.raises(ValueError):
        PowerPriorSpec(alpha0=2.5)
    with pytest.raises(ValueError):
        PriorSpec(mu_precision=0.0)
    with pytest.raises(ValueError):
        McmcConfig(chains=0)
    with pytest.raises(bayes.SamplerError):
        bayes.sample(K.WEIBULL, make_data(n=10), config=SMALL)
