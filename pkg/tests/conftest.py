"""Shared fixtures: reference markets and random-market factories."""

import numpy as np
import pytest

from fisher_infer.markets import (
    FiniteMarket,
    Linear1DValuation,
    LongRunSpec,
    Uniform01Supply,
    random_linear1d_spec,
)


@pytest.fixture
def symmetric_spec() -> LongRunSpec:
    """Two mirrored buyers, v1 = 2-2t, v2 = 2t, equal budgets.

    Every long-run quantity is known in closed form for this market:
    beta* = (2/3, 2/3), breakpoints (0, 1/2, 1), u* = (3/4, 3/4),
    NSW* = log(3/4), sigma2 = 1/27, Omega2 = 29/48 per buyer.
    """
    return LongRunSpec(
        budgets=np.array([0.5, 0.5]),
        valuation=Linear1DValuation(c=np.array([-2.0, 2.0]), d=np.array([2.0, 0.0])),
        supply=Uniform01Supply(),
    )


@pytest.fixture
def five_buyer_spec() -> LongRunSpec:
    # fixed seed keeps the long-run reference solvable and stable across runs
    return random_linear1d_spec(5, seed=42)


def _random_market(n: int, t: int, seed: int, zero_frac: float = 0.0) -> FiniteMarket:
    gen = np.random.default_rng(seed)
    V = gen.uniform(0.1, 3.0, size=(n, t))
    if zero_frac > 0.0:
        V[gen.random((n, t)) < zero_frac] = 0.0
        dead = ~(V > 0).any(axis=1)
        V[dead, 0] = 1.0  # every buyer must keep one positive value
    b = gen.uniform(0.2, 1.0, size=n)
    return FiniteMarket(V=V, budgets=b / b.sum())


@pytest.fixture
def make_market():
    """Factory for random finite markets with normalized budgets."""
    return _random_market


def _box_point(budgets: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    # a uniform draw from the multiplier box C = prod_i [b_i/2, 2]
    lo = budgets / 2.0
    return gen.uniform(lo, 2.0)


@pytest.fixture
def box_point():
    """Factory drawing beta uniformly from the box C = prod [b_i/2, 2]."""
    return _box_point
