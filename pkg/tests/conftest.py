import numpy as np
import pytest

from manifold_ess.geometry import Chain, uniform_sphere
from manifold_ess.samplers import ChainRunConfig, VmfParams, rwmh_sphere


def random_spd(rng, m=3, spread=1.0):
    a = rng.standard_normal((m, m))
    q, _ = np.linalg.qr(a)
    lam = np.exp(spread * rng.uniform(-1, 1, m))
    return (q * lam) @ q.T


def random_frame(rng, m=4, p=2):
    q, _ = np.linalg.qr(rng.standard_normal((m, p)))
    return q


def random_correlation(rng, m=3):
    a = random_spd(rng, m)
    d = 1.0 / np.sqrt(np.diag(a))
    c = a * d[:, None] * d[None, :]
    np.fill_diagonal(c, 1.0)
    return c


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def short_rwmh_chain():
    cfg = ChainRunConfig(600, 200, 7, VmfParams((0.0, 0.0, 1.0), 12.0), 35.0)
    chain, _ = rwmh_sphere(cfg)
    return chain


@pytest.fixture(scope="session")
def iid_sphere_chain():
    return Chain("sphere", uniform_sphere(500, 3, np.random.default_rng(3)))
