import os
import subprocess
import sys

import numpy as np
import pytest

from survext import kernels
from survext.parametric import ALL_KINDS
from conftest import make_data

PARAMS = {0: (0.05, 0.0), 1: (0.05, 1.3), 2: (2.4, 1.1), 3: (0.08, 1.4), 4: (0.02, -0.03)}


def test_env_flag_disables_numba():
    code = "from survext import kernels; print(kernels.USE_NUMBA, kernels.default_backend())"
    env = dict(os.environ, SURVEXT_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["False", "numpy"]


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels._resolve("fortran")


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
@pytest.mark.parametrize("kind", ALL_KINDS)
def test_loglik_parity(kind):
    d = make_data(n=300, seed=2, entry=None)
    w = np.linspace(0.5, 1.5, len(d))
    a, b = PARAMS[kind.code]
    v_np = kernels.loglik(kind.code, a, b, d.time, d.entry, d.event, w, backend="numpy")
    v_nb = kernels.loglik(kind.code, a, b, d.time, d.entry, d.event, w, backend="numba")
    assert v_nb == pytest.approx(v_np, rel=1e-12)


@pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")
def test_log_target_parity():
    d = make_data(n=100, seed=3)
    w = np.ones(len(d))
    prior = np.array([0.0, 0.01, 0.001, 0.001])
    anchor = np.array([1.0, 80.0, 0.35, 100.0])
    for code in (0, 2, 3):
        for x in (np.array([-3.0]), np.array([2.4, -0.1]), np.array([-2.5, 0.3])):
            if (code == 0) != (x.size == 1):
                continue
            a = kernels.log_target(code, x, d.time, d.entry, d.event, w, prior, anchor, "numpy")
            b = kernels.log_target(code, x, d.time, d.entry, d.event, w, prior, anchor, "numba")
            np.testing.assert_allclose(a, b, rtol=1e-12)


def test_nonfinite_parameters_give_sentinel():
    d = make_data(n=10, seed=1)
    w = np.ones(len(d))
    prior = np.array([0.0, 0.01, 0.001, 0.001])
    for backend in ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else []):
        lp, ll = kernels.log_target(2, np.array([np.nan, 0.0]), d.time, d.entry, d.event, w,
                                    prior, np.zeros(4), backend)
        assert lp == -np.inf and ll == -np.inf
        lp, _ = kernels.log_target(2, np.array([2.0, 800.0]), d.time, d.entry, d.event, w,
                                   prior, np.zeros(4), backend)
        assert lp == -np.inf
