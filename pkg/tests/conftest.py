import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


def random_pd(rng, p, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    evals = np.exp(rng.uniform(0, np.log(cond), p))
    m = (q * evals) @ q.T
    return 0.5 * (m + m.T)


def random_stack(rng, K, p, alphas=None):
    from twolayer.core import PrecisionStack

    return PrecisionStack(np.stack([random_pd(rng, p) for _ in range(K + 1)]), alphas)


def conditional_oracle(S, stack):
    """E-step moments from the dense joint Gaussian of (Z, Y)."""
    K, p = stack.k_categories, stack.p
    a = stack.alphas
    sig = [np.linalg.inv(o) for o in stack.omegas]
    sigma_y = np.kron(np.outer(a, a), sig[0])
    for k in range(K):
        sigma_y[k * p:(k + 1) * p, k * p:(k + 1) * p] += sig[k + 1]
    C = np.hstack([a[k] * sig[0] for k in range(K)])  # cov(Z, Y)
    G = C @ np.linalg.inv(sigma_y)
    ezz = sig[0] - G @ C.T + G @ S @ G.T
    out = [ezz]
    for k in range(K):
        blk = slice(k * p, (k + 1) * p)
        cross = S[blk, :] @ G.T  # average of y_k E[z|y]'
        out.append(S[blk, blk] - a[k] * (cross + cross.T) + a[k] ** 2 * ezz)
    return np.stack(out)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
