import numpy as np
import pytest

from survext import kernels
from survext.dataset import Dataset, load_ipd
from survext.io import resolve_path
from survext.parametric import ParamVector, simulate

BACKENDS = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def soc():
    return load_ipd(resolve_path("@rct")).filter_arm("SOC")


def make_data(kind="lognormal", params=None, n=200, seed=0, censor=48.0, entry=None):
    params = params or ParamVector(mu=np.log(11.0), sigma=1.1)
    rng = np.random.default_rng(seed)
    t, e = simulate(kind, params, n, rng, censor)
    return Dataset.from_arrays(np.maximum(t, 1e-6), e, entry)


@pytest.fixture
def toy_exp():
    return Dataset.from_arrays([1.0, 2.0, 3.0, 4.0], [True, True, True, False])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
