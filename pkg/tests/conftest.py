import numpy as np
import pytest

from stgp import kernels as kn
from stgp.data import Dataset

BASE_KINDS = ("exponential", "matern32", "rbf", "periodic", "bias")


def random_base(rng, D=3):
    kind = BASE_KINDS[rng.integers(len(BASE_KINDS))]
    var = float(np.exp(rng.uniform(-1.5, 1.5)))
    if kind == "bias":
        return kn.bias(var)
    ls = float(np.exp(rng.uniform(-1.0, 1.5)))
    ndim = int(rng.integers(1, D + 1))
    dims = tuple(sorted(rng.choice(D, size=ndim, replace=False)))
    if kind == "periodic":
        return kn.periodic(var, ls, period=float(rng.uniform(1.0, 10.0)), dims=dims[:1])
    return kn.Base(kind, kn.KernelParams(var, ls), dims)


def random_tree(rng, depth=3, D=3):
    """Random sum/product tree of depth <= ``depth``."""
    if depth == 0 or rng.random() < 0.3:
        return random_base(rng, D)
    left = random_tree(rng, depth - 1, D)
    right = random_tree(rng, depth - 1, D)
    return kn.Sum(left, right) if rng.random() < 0.5 else kn.Product(left, right)


def toy_dataset(L=2, W=4, seed=0, rate=2e-4, pop=10_000):
    rng = np.random.default_rng(seed)
    lon = rng.uniform(-2, 0, L)
    lat = rng.uniform(52, 53, L)
    counts = rng.poisson(rate * pop * 3, size=(L, W)).astype(float)
    return Dataset([f"A{i}" for i in range(L)], lon, lat, np.arange(1, W + 1), counts,
                   np.ones((L, W), bool), np.full((L, W), float(pop)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance report

ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: (int(k.rstrip("ab")), k)):
        status, title, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{status} criterion {key}: {title} ({detail})")
