import numpy as np
import pytest
from hypothesis import settings

from kgbwhitham.spectral import Grid1D

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def report(line):
    """Record an acceptance verdict; all are repeated in the summary."""
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def smooth_real_coeffs(grid, rng, width=None, scale=1.0):
    """Coefficients of a random smooth real field, band-limited to
    ``|index| <= width`` and free of the Nyquist mode."""
    width = grid.n_points // 8 if width is None else width
    idx = grid.index
    c = np.zeros(grid.n_points, dtype=complex)
    pos = (idx > 0) & (idx <= width)
    c[pos] = (rng.standard_normal(pos.sum())
              + 1j * rng.standard_normal(pos.sum())) * np.exp(
                  -(idx[pos] / max(width, 1)) ** 2)
    c[(-idx[pos]) % grid.n_points] = np.conj(c[pos])
    c[0] = rng.standard_normal()
    return scale * c


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid64():
    return Grid1D(64, 2 * np.pi * 8)
