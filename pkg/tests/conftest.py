import numpy as np
import pytest

from overfit_lab.model import ModelSpec

_CRITERIA = []


def record_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    _CRITERIA.append(line)
    print(line, flush=True)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T / d + 0.5 * np.eye(d))


def special_spec(rng, m, p, scale=0.1):
    """Whitened signals and precision-weighted portfolio."""
    return ModelSpec.simple(scale * rng.standard_normal((m, p)), sigma_eps=random_spd(rng, m))


def general_spec(rng, m, p, scale=0.1, intercept=True):
    """Correlated signals, optional intercept in row 0, correlated noise."""
    sigma_s = random_spd(rng, p)
    mu = np.zeros(p)
    if intercept:
        sigma_s[0, :] = sigma_s[:, 0] = 0.0
        mu[0] = 1.0
    return ModelSpec(scale * rng.standard_normal((m, p)), mu, sigma_s, random_spd(rng, m),
                     has_intercept=intercept)
