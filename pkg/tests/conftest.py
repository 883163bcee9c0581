import functools

import numpy as np
import pytest

from marisac.ao import initialize
from marisac.channel import sample_realization
from marisac.config import ScenarioConfig
from marisac.ris import optimize_phase


@pytest.fixture
def desk():
    return ScenarioConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_hermitian(rng, n, psd=False):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T if psd else 0.5 * (A + A.conj().T)


@functools.lru_cache(maxsize=None)
def feasible_seeds(config: ScenarioConfig, count: int, start: int = 0) -> tuple:
    """First ``count`` seeds whose initial point is feasible."""
    from marisac.ao import InitializationError

    out, s = [], start
    while len(out) < count:
        try:
            initialize(config, sample_realization(config, s))
            out.append(s)
        except InitializationError:
            pass
        s += 1
    return tuple(out)


@functools.lru_cache(maxsize=None)
def phased_state(config: ScenarioConfig, seed: int):
    """(realization, layout, reflect, cov) after one covariance and one phase solve."""
    real = sample_realization(config, seed)
    st = initialize(config, real)
    res = optimize_phase(real, st.layout, st.cov, config, st.reflect)
    return real, st.layout, res.solution.reflect, st.cov


# -- acceptance reporting --------------------------------------------------------

ACCEPTANCE: dict = {}


@pytest.fixture
def report():
    """Record one acceptance line; call as ``report(n, name, ok, detail)``."""

    def _record(n: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {n:2d} {name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        ACCEPTANCE[n] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
