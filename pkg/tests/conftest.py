import numpy as np
import pytest

from cgoamp.channel import RealLinearSystem, realify, sample_rayleigh
from cgoamp.constellation import make_constellation, map_bits


def random_system(rng, nr, nt, snr_db=12.0, order=4, batch=None):
    """Rayleigh system with calibrated noise; u_truth holds the real labels."""
    c = make_constellation(order)
    size = 1 if batch is None else batch
    G = sample_rayleigh(nr, nt, rng, size=size)
    bits = rng.integers(0, 2, size=size * nt * c.bits_per_symbol)
    u = map_bits(bits, c).reshape(size, nt)
    sigma2 = np.sum(np.abs(G) ** 2, axis=(1, 2)) / nr * 10 ** (-snr_db / 10)
    w = np.sqrt(sigma2 / 2)[:, None] * (rng.standard_normal((size, nr)) + 1j * rng.standard_normal((size, nr)))
    y = np.einsum("bij,bj->bi", G, u) + w
    sys = realify(G, y, sigma2, u)
    if batch is None:
        return RealLinearSystem(sys.C[0], sys.y[0], float(sys.sigma2[0]), sys.u_truth[0])
    return sys


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
