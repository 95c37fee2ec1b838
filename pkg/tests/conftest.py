import numpy as np
import pytest
from hypothesis import settings

import dualgibbs as dg

# numba warm-up can blow per-test deadlines on first runs
settings.register_profile("dualgibbs", deadline=None, max_examples=50)
settings.load_profile("dualgibbs")


def random_model(seed, n_lo=2, n_hi=4, max_factors=4, unary_scale=1.0) -> dg.Model:
    """Small random binary model: tables exp(N(0,1)), unaries N(0, scale)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = int(rng.integers(n_lo, n_hi + 1))
    m = dg.Model()
    for _ in range(n):
        m.add_variable(2, np.array([0.0, unary_scale * rng.standard_normal()]))
    n_factors = int(rng.integers(1, max_factors + 1))
    for _ in range(n_factors):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            v = (u + 1) % n
        m.add_factor((min(u, v), max(u, v)), np.exp(rng.standard_normal((2, 2))))
    return m


def exact_p1(model) -> np.ndarray:
    """Per-variable P(x_v = 1) by enumeration."""
    from dualgibbs import oracle

    return np.array([marg[1] for marg in oracle.exact_summary(model).marginals])


@pytest.fixture
def grid33():
    return dg.build_grid_ising(3, 3, 0.3, np.random.default_rng(11).normal(size=9) * 0.5)


@pytest.fixture
def ising_edge():
    m = dg.Model()
    m.add_variable(2)
    m.add_variable(2)
    w = 1.0
    m.add_factor((0, 1), np.array([[1.0, np.exp(-w)], [np.exp(-w), 1.0]]))
    return m
