import sys

import numpy as np
import pytest

from stellagen.surface import circular_torus, feature_length, legal_mask


def random_shaped_surface(rng, nfp=3, m_pol=4, n_tor=3, amplitude=0.02):
    """Torus of major radius 1, minor 0.2, with decaying random shaping."""
    base = circular_torus(1.0, 0.2, nfp=nfp, m_pol=m_pol, n_tor=n_tor)
    tables = {}
    for name in "xyz":
        mask = legal_mask(name, m_pol, n_tor)
        i = np.arange(2 * m_pol + 1)
        j = np.arange(2 * n_tor + 1)
        order = np.where(i > m_pol, i - m_pol, i)[:, None] + np.where(j > n_tor, j - n_tor, j)[None, :]
        noise = amplitude * rng.standard_normal(mask.shape) * np.exp(-1.0 * order)
        tables[name] = getattr(base, f"{name}_coeffs") + np.where(mask, noise, 0.0)
    return base.with_coeffs(**tables)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def shaped_surface(rng):
    return random_shaped_surface(rng)


def random_coeff_vector(rng, m_pol=10, n_tor=10):
    return rng.standard_normal(feature_length(m_pol, n_tor))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
        terminalreporter.write_line(line)
