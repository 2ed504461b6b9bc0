import numpy as np
import pytest

from netcert import truthoracle as oracle

GAMMA0 = 2.8836  # true norm of the three-subsystem chain benchmark


@pytest.fixture(scope="session")
def example1():
    return oracle.example1_system()


def make_experiment(sys_model, sigma, seed, N=50, model="ball"):
    cfg = oracle.ExperimentConfig(N=N, sigma=sigma, noise_model=model, seed=seed)
    return oracle.generate_experiment(sys_model, cfg)


def random_stable_system(rng, n=3, m=2, p=2, rho=0.85):
    A = rng.standard_normal((n, n))
    A *= rho / max(abs(np.linalg.eigvals(A)))
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    D = 0.1 * rng.standard_normal((p, m))
    return oracle.SystemModel(A, B, C, D)
