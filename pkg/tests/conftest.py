import numpy as np
import pytest

from sthawkes import NetworkParams, SingleGaussian, validate


def random_instance(rng, n, mu_lo=0.01, mu_hi=0.05, omega=0.2, sigma0=0.25, sigma=0.1,
                    target_branching=None):
    """A random stationary network like the synthetic-experiment sampler."""
    mu = rng.uniform(mu_lo, mu_hi, n)
    A = 1.5 * rng.random((n, n))
    rho = float(np.max(np.abs(np.linalg.eigvals(A))))
    target = target_branching if target_branching is not None else 0.9
    if rho >= omega * target:
        A = A * (target * omega / rho)
    return validate(NetworkParams(n, SingleGaussian(mu, sigma0), A, omega, sigma))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
