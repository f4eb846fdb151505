"""Compare the numba and numpy kernel paths.

    python3 benchmarks/bench_kernels.py [--n 5000] [--iters 20000] [--repeat 5]

Times one log-likelihood evaluation per model and one sampler chain, and
checks that both paths agree.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from survext import kernels
from survext.bayes import PriorSpec

MODELS = {"exponential": (kernels.EXPONENTIAL, 0.05, 0.0),
          "weibull": (kernels.WEIBULL, 0.05, 1.2),
          "lognormal": (kernels.LOGNORMAL, 2.4, 1.1),
          "loglogistic": (kernels.LOGLOGISTIC, 0.08, 1.4),
          "gompertz": (kernels.GOMPERTZ, 0.04, 0.02)}


def best_of(f, repeat):
    out = None
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = f()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5000, help="records")
    ap.add_argument("--iters", type=int, default=20000, help="sampler iterations")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    t = rng.lognormal(2.4, 1.1, args.n)
    c = rng.uniform(10, 48, args.n)
    event = t <= c
    t = np.minimum(t, c)
    entry = np.zeros(args.n)
    w = np.ones(args.n)

    print(f"{'kernel':<22}{'numba s':>12}{'numpy s':>12}{'speed-up':>10}{'max |diff|':>13}")
    for name, (code, a, b) in MODELS.items():
        kernels.loglik(code, a, b, t, entry, event, w, backend="numba")  # compile
        tn, vn = best_of(lambda: kernels.loglik(code, a, b, t, entry, event, w, backend="numba"),
                         args.repeat)
        tp, vp = best_of(lambda: kernels.loglik(code, a, b, t, entry, event, w, backend="numpy"),
                         args.repeat)
        print(f"{'loglik ' + name:<22}{tn:>12.2e}{tp:>12.2e}{tp / tn:>10.1f}{abs(vn - vp):>13.2e}")

    sub = slice(0, min(args.n, 500))
    prior = PriorSpec().as_array()
    anchor = np.zeros(4)
    z = rng.standard_normal((args.iters, 2))
    logu = np.log(rng.random(args.iters))
    x0 = np.array([2.4, -0.1])
    chol = np.diag([0.08, 0.06])
    chain_args = (kernels.LOGNORMAL, t[sub], entry[sub], event[sub], w[sub], prior, anchor,
                  x0, chol, 1.7, z, logu, args.iters // 2)
    kernels.rwm_chain(*chain_args, backend="numba")
    tn, dn = best_of(lambda: kernels.rwm_chain(*chain_args, backend="numba"), 1)
    tp, dp = best_of(lambda: kernels.rwm_chain(*chain_args, backend="numpy"), 1)
    diff = float(np.max(np.abs(dn[0] - dp[0])))
    print(f"{'rwm lognormal':<22}{tn:>12.2e}{tp:>12.2e}{tp / tn:>10.1f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
