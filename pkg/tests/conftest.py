import numpy as np
import pytest

from attackability.models import LinearModel, MlpModel


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_linear(rng, d=5, m=4, bias_scale=0.3):
    return LinearModel(rng.normal(size=(m, d)), bias_scale * rng.normal(size=m))


def random_mlp(rng, d=5, k=6, m=4):
    return MlpModel(0.5 * rng.normal(size=(k, d)), 0.3 * rng.normal(size=k),
                    rng.normal(size=(m, k)), 0.3 * rng.normal(size=m))


def random_labels(rng, n, m):
    return np.where(rng.normal(size=(n, m)) > 0, 1.0, -1.0)


def central_difference(f, params, h=1e-6):
    """Numerical gradient of scalar f(params) for a dict of arrays."""
    out = {}
    for name, value in params.items():
        g = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            g[idx] = (f(plus) - f(minus)) / (2 * h)
        out[name] = g
    return out


def relative_error(a, b):
    a = np.concatenate([np.ravel(v) for v in a])
    b = np.concatenate([np.ravel(v) for v in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


# PASS/FAIL lines from the acceptance suite, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
