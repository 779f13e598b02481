import math

import numpy as np
import pytest

from dickesim.model import DickeConfig, ExponentialRamp, khz_to_angular

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


G0 = khz_to_angular(1.32)
DELTA = khz_to_angular(-1.0)


@pytest.fixture
def small_cfg():
    """N = 4 EXP ramp with the experimental couplings, short and cheap."""
    return DickeConfig(
        N=4, g0=G0, delta=DELTA, ramp=ExponentialRamp(khz_to_angular(7.1), 0.6, 2.0), n_samples=41
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_hermitian(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (a + a.conj().T) / math.sqrt(dim)
