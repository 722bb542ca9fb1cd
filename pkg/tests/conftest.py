import warnings

import numpy as np
import pytest

from emgpr.kernels import KernelSpec, gram


def dense_joint_cov(vectors, grams, noise_var):
    """Naive oracle: sum_q (sum_j w w^T) kron K_q + diag(noise) kron I via np.kron."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim == 2:
        vectors = vectors[:, None, :]
    N = grams[0].shape[0]
    D = vectors.shape[2]
    C = np.zeros((N * D, N * D))
    for q, K in enumerate(grams):
        B = sum(np.outer(w, w) for w in vectors[q])
        C += np.kron(B, K)
    return C + np.kron(np.diag(noise_var), np.eye(N))


def dense_cross_cov(vectors, grams_cross):
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim == 2:
        vectors = vectors[:, None, :]
    out = 0
    for q, K in enumerate(grams_cross):
        B = sum(np.outer(w, w) for w in vectors[q])
        out = out + np.kron(B, K)
    return out


def dense_log_marginal(C, y):
    Cinv = np.linalg.inv(C)
    _, logdet = np.linalg.slogdet(C)
    return float(-0.5 * y @ Cinv @ y - 0.5 * logdet - 0.5 * y.size * np.log(2 * np.pi))


def random_problem(rng, N, D, P=2, k=1, noise=None):
    """Random inputs, per-task SE grams, weights, noise and targets."""
    X = rng.uniform(0, 2, size=(N, P))
    lengthscales = rng.uniform(0.4, 1.5, size=D)
    grams = [gram(KernelSpec.se(a), X) for a in lengthscales]
    vectors = rng.normal(size=(D, k, D))
    noise = rng.uniform(0.05, 0.3, size=D) if noise is None else np.asarray(noise, dtype=float)
    y = rng.normal(size=N * D)
    return X, lengthscales, grams, vectors, noise, y


def central_diff(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_mean_warning():
    # raw GP draws are not centred; the fitter's advice about normalizing is expected here
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*mean.*", category=UserWarning)
        yield


# one "PASS"/"FAIL" line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
