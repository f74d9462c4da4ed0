import numpy as np
import pytest

from moclust.matnorm import ComponentParams

# criterion name -> (passed, detail), filled by test_acceptance
ACCEPTANCE_RESULTS = {}


def random_spd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T / d + 0.5 * np.eye(d))


def random_params(rng, r, c, pi=1.0):
    return ComponentParams(rng.standard_normal((r, c)), random_spd(rng, r), random_spd(rng, c), pi)


def kron_logpdf(X, p):
    """Brute force: rc-variate normal log-density of vec(X) with covariance kron(V, U)."""
    x = np.asarray(X).flatten(order="F") - p.M.flatten(order="F")
    S = np.kron(p.V, p.U)
    sign, logdet = np.linalg.slogdet(S)
    assert sign > 0
    return -0.5 * (x.size * np.log(2 * np.pi) + logdet + x @ np.linalg.solve(S, x))


def kron_mahalanobis(X, p):
    x = np.asarray(X).flatten(order="F") - p.M.flatten(order="F")
    return float(x @ np.linalg.solve(np.kron(p.V, p.U), x))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
