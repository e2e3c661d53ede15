import numpy as np
import pytest
from hypothesis import settings

from poisson_hail import _kernels
from poisson_hail.rain import Dist, RainConfig, ShapeDist, sample_rain

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

BACKENDS = [pytest.param(_kernels.numpy_impl, id="numpy")]
if _kernels.numba_impl is not None:
    BACKENDS.insert(0, pytest.param(_kernels.numba_impl, id="numba"))


@pytest.fixture(params=BACKENDS)
def impl(request):
    return request.param


def small_rain(rng, d=2, lam=None, n_max=50, side=4.0, kinds=("cube", "ball", "box")):
    """Random rain with at most ``n_max`` arrivals of mixed shapes on ``[0, side]^d x [0, 5]``."""
    kind = kinds[int(rng.integers(len(kinds)))]
    shape = ShapeDist(kind, Dist.uniform(0.1, 1.0))
    if lam is None:
        lam = float(rng.uniform(0.05, 0.3)) * n_max / (side**d * 5.0) * 4
    cfg = RainConfig(d, lam, ((0.0,) * d, (side,) * d), (0.0, 5.0), shape, Dist.exponential(1.0), pad=0.5)
    rain = sample_rain(cfg, rng)
    if len(rain) > n_max:
        rain = rain.take(np.arange(n_max))
    return rain


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
