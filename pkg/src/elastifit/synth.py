"""Synthetic demand instances and exact Poisson sampling.

Instance recipe: prices uniform on [1, 2]; nominal log-prices are the
per-product mean of the log prices (so design rows are centered); the true
elasticity matrix is low-rank plus diagonal with Gaussian factors and a
uniform negative diagonal on [-5, -1]; nominal demand is 1; unit costs are
uniform on [0.8, 1.2]; demand columns are Poisson draws at the implied
rates.

Randomness is split into five purpose streams (prices, factors, diagonal,
demand, costs) derived from one seed, so changing how many numbers one
purpose consumes never shifts the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .core import Dataset, ElasticityModel, assemble_design
from .errors import ConfigError, DataError

__all__ = [
    "SyntheticInstance",
    "generate_synthetic",
    "poisson_sample",
    "poisson_counts",
]

# Purpose tags for the per-seed random streams.
_PRICES, _FACTORS, _DIAGONAL, _DEMAND, _COSTS = range(5)

# Sampler switchover: Knuth's multiplication method up to this rate,
# inversion by chop-down above it.
_KNUTH_MAX_RATE = 30.0
# Above this rate a draw is split into independent smaller draws so the
# chop-down start probability exp(-rate) stays well away from underflow.
_SPLIT_RATE = 500.0


@dataclass(frozen=True)
class SyntheticInstance:
    """A generated dataset together with the truth that produced it."""

    dataset: Dataset
    truth: ElasticityModel
    p_nom: np.ndarray
    cost: np.ndarray
    seed: int

    @property
    def e_syn(self) -> np.ndarray:
        """True n-by-n elasticity matrix."""
        return self.truth.elasticity

    @property
    def d_nom_syn(self) -> np.ndarray:
        """True nominal demand (all ones)."""
        return self.truth.d_nom


def generate_synthetic(
    n: int, n_obs: int, r_syn: int, seed: int, spread: str = "variance"
) -> SyntheticInstance:
    """Generate a seeded synthetic instance.

    Factor entries are normal with mean 0 and variance 0.1 by default;
    ``spread="std"`` reads 0.1 as the standard deviation instead.
    """
    if n < 1 or n_obs < 1 or r_syn < 1:
        raise ConfigError(f"n, n_obs, r_syn must be positive, got {(n, n_obs, r_syn)}")
    if spread == "variance":
        sd = float(np.sqrt(0.1))
    elif spread == "std":
        sd = 0.1
    else:
        raise ConfigError(f"spread must be 'variance' or 'std', got {spread!r}")

    prices = rng.stream(seed, _PRICES).uniform(1.0, 2.0, size=(n, n_obs))
    p_nom = np.exp(np.log(prices).mean(axis=1))
    design = assemble_design(prices, p_nom)

    factors = rng.stream(seed, _FACTORS)
    B = sd * factors.standard_normal((n, r_syn))
    C = sd * factors.standard_normal((n, r_syn))
    s = rng.stream(seed, _DIAGONAL).uniform(-5.0, -1.0, size=n)
    truth = ElasticityModel(B=B, C=C, s=s, log_d_nom=np.zeros(n))

    log_rates = truth.elasticity @ design[:n]
    demands = poisson_counts(np.exp(log_rates), rng.stream(seed, _DEMAND))
    cost = rng.stream(seed, _COSTS).uniform(0.8, 1.2, size=n)
    return SyntheticInstance(
        dataset=Dataset(demands, design), truth=truth, p_nom=p_nom, cost=cost, seed=seed
    )


def poisson_sample(rate: float, gen: np.random.Generator) -> int:
    """One Poisson draw with the given positive finite rate.

    Uses Knuth's multiplication method for rates up to 30 and inversion by
    chop-down above; see :func:`poisson_counts`.
    """
    return int(poisson_counts(np.asarray([rate]), gen)[0])


def poisson_counts(rates: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Elementwise Poisson draws for an array of positive finite rates.

    Lanes with rate <= 30 use Knuth's multiplication method (count uniform
    factors until the running product drops below ``exp(-rate)``); larger
    rates use inversion by chop-down (walk the pmf from k = 0 via the
    recurrence ``p_{k+1} = p_k * rate / (k+1)`` until the cumulative mass
    passes a single uniform).  Rates above 500 are split into several
    independent smaller draws whose sum has the exact target distribution.
    Draw order: the Knuth group first, then the chop-down group, then each
    split lane in index order, so results are deterministic for a given
    generator state.
    """
    rates = np.asarray(rates, dtype=np.float64)
    bad = ~(np.isfinite(rates) & (rates > 0))
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise DataError(f"rate at index {tuple(idx)} is {rates[tuple(idx)]}; must be positive and finite")
    flat = rates.ravel()
    out = np.zeros(flat.shape, dtype=np.int64)

    small = flat <= _KNUTH_MAX_RATE
    if np.any(small):
        out[small] = _knuth_batch(flat[small], gen)
    mid = (flat > _KNUTH_MAX_RATE) & (flat <= _SPLIT_RATE)
    if np.any(mid):
        out[mid] = _chop_batch(flat[mid], gen)
    for i in np.flatnonzero(flat > _SPLIT_RATE):
        pieces = int(np.ceil(flat[i] / _SPLIT_RATE))
        out[i] = int(np.sum(_chop_batch(np.full(pieces, flat[i] / pieces), gen)))
    return out.reshape(rates.shape)


def _knuth_batch(rates: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    limit = np.exp(-rates)
    product = np.ones_like(rates)
    counts = np.zeros(rates.shape, dtype=np.int64)
    active = np.ones(rates.shape, dtype=bool)
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        product[idx] *= gen.random(idx.size)
        counts[idx] += 1
        active[idx] = product[idx] > limit[idx]
    return counts - 1


def _chop_batch(rates: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    u = gen.random(rates.size)
    pmf = np.exp(-rates)
    cum = pmf.copy()
    counts = np.zeros(rates.shape, dtype=np.int64)
    active = cum < u
    while True:
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        counts[idx] += 1
        pmf[idx] *= rates[idx] / counts[idx]
        cum[idx] += pmf[idx]
        # pmf underflow can only happen in the far tail; stop those lanes.
        active[idx] = (cum[idx] < u[idx]) & (pmf[idx] > 0)
    return counts
