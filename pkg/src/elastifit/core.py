"""Demand-model types and the regularized Poisson likelihood.

Demand counts for ``n`` products over ``N`` periods are modeled as
independent Poisson draws whose log-rates are affine in log price changes:
stacking the elasticity matrix ``E`` with the log nominal demand gives the
augmented matrix ``E_tilde = [E, log_d_nom]`` so that the log-rate matrix is
``E_tilde @ design``, where the design holds the log price changes plus a
constant-one last row.  The low-rank parameterization
``E = B @ C.T + diag(s)`` keeps the parameter count at ``n * (2r + 2)``.

All types are immutable after construction (arrays are marked read-only)
and every operation here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "ElasticityModel",
    "Hyperparams",
    "assemble_design",
    "effective_elasticity",
    "data_fit",
    "objective",
    "gradient",
    "average_log_likelihood",
    "model_to_params",
    "model_from_params",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True, order="C")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Observed demand counts and the augmented log-price-change design.

    Parameters
    ----------
    demands : (n, N) array
        Units sold per product per period.  Entries must be nonnegative
        integers (integer-valued floats are accepted and stored as float64).
    design : (n + 1, N) array
        Log price changes from nominal, with a last row that is exactly 1
        in every column.  Build it with :func:`assemble_design`.

    The product ``demands @ design.T`` is precomputed at construction; the
    gradient of the likelihood reuses it on every evaluation.
    """

    demands: np.ndarray
    design: np.ndarray
    demand_design_t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        demands = np.asarray(self.demands, dtype=np.float64)
        design = np.asarray(self.design, dtype=np.float64)
        if demands.ndim != 2 or design.ndim != 2:
            raise DataError("demands and design must be 2-D arrays")
        if design.shape[0] != demands.shape[0] + 1:
            raise DataError(
                f"design must have one more row than demands: "
                f"got {design.shape[0]} rows for {demands.shape[0]} products"
            )
        if design.shape[1] != demands.shape[1]:
            raise DataError(
                f"column counts differ: demands has {demands.shape[1]}, "
                f"design has {design.shape[1]}"
            )
        if demands.shape[1] == 0:
            raise DataError("dataset must contain at least one observation")
        if not np.all(np.isfinite(design)):
            raise DataError("design contains non-finite entries")
        if not np.all(np.isfinite(demands)):
            raise DataError("demands contains non-finite entries")
        if np.any(demands < 0):
            i, j = np.argwhere(demands < 0)[0]
            raise DataError(f"demands[{i},{j}] = {demands[i, j]} is negative")
        if np.any(demands != np.floor(demands)):
            i, j = np.argwhere(demands != np.floor(demands))[0]
            raise DataError(f"demands[{i},{j}] = {demands[i, j]} is not an integer")
        if not np.all(design[-1] == 1.0):
            j = int(np.argwhere(design[-1] != 1.0)[0][0])
            raise DataError(f"last design row must be exactly 1; column {j} is {design[-1, j]}")
        object.__setattr__(self, "demands", _readonly(demands))
        object.__setattr__(self, "design", _readonly(design))
        object.__setattr__(self, "demand_design_t", _readonly(demands @ design.T))

    @property
    def n_products(self) -> int:
        return self.demands.shape[0]

    @property
    def n_obs(self) -> int:
        return self.demands.shape[1]

    def subset(self, columns: np.ndarray) -> "Dataset":
        """Dataset restricted to the given observation columns."""
        columns = np.asarray(columns)
        return Dataset(self.demands[:, columns], self.design[:, columns])


@dataclass(frozen=True)
class ElasticityModel:
    """Low-rank plus diagonal elasticity model.

    The elasticity matrix is ``B @ C.T + diag(s)`` with factors of shape
    (n, r), and ``log_d_nom`` is the log of the expected demand at nominal
    prices.
    """

    B: np.ndarray
    C: np.ndarray
    s: np.ndarray
    log_d_nom: np.ndarray

    def __post_init__(self) -> None:
        B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        C = np.atleast_2d(np.asarray(self.C, dtype=np.float64))
        s = np.asarray(self.s, dtype=np.float64).ravel()
        log_d_nom = np.asarray(self.log_d_nom, dtype=np.float64).ravel()
        if B.shape != C.shape:
            raise ConfigError(f"B and C must have identical shape: {B.shape} vs {C.shape}")
        n, r = B.shape
        if r < 1:
            raise ConfigError("rank bound must be at least 1")
        if s.shape != (n,) or log_d_nom.shape != (n,):
            raise ConfigError("s and log_d_nom must be length-n vectors")
        for name, a in (("B", B), ("C", C), ("s", s), ("log_d_nom", log_d_nom)):
            if not np.all(np.isfinite(a)):
                raise ConfigError(f"{name} contains non-finite entries")
        object.__setattr__(self, "B", _readonly(B))
        object.__setattr__(self, "C", _readonly(C))
        object.__setattr__(self, "s", _readonly(s))
        object.__setattr__(self, "log_d_nom", _readonly(log_d_nom))

    @property
    def n_products(self) -> int:
        return self.B.shape[0]

    @property
    def rank(self) -> int:
        return self.B.shape[1]

    @property
    def elasticity(self) -> np.ndarray:
        """The n-by-n elasticity matrix ``B @ C.T + diag(s)``."""
        E = self.B @ self.C.T
        E[np.diag_indices_from(E)] += self.s
        return E

    @property
    def d_nom(self) -> np.ndarray:
        """Expected demand at nominal prices, ``exp(log_d_nom)``."""
        return np.exp(self.log_d_nom)


@dataclass(frozen=True)
class Hyperparams:
    """Rank bound and regularization strength of the fitting problem."""

    r: int
    lam: float

    def __post_init__(self) -> None:
        if int(self.r) != self.r or self.r < 1:
            raise ConfigError(f"rank bound r must be a positive integer, got {self.r}")
        if not (self.lam > 0):
            raise ConfigError(f"regularization strength lam must be positive, got {self.lam}")
        object.__setattr__(self, "r", int(self.r))
        object.__setattr__(self, "lam", float(self.lam))


def assemble_design(prices: np.ndarray, nominal_prices: np.ndarray) -> np.ndarray:
    """Augmented design from raw prices: log price changes plus a ones row.

    Parameters
    ----------
    prices : (n, N) array of positive prices, observations in columns.
    nominal_prices : length-n vector of positive reference prices.

    Returns
    -------
    (n + 1, N) array whose entry (i, j) is ``log(prices[i, j] /
    nominal_prices[i])`` for i < n, with a last row of ones.
    """
    prices = np.atleast_2d(np.asarray(prices, dtype=np.float64))
    nominal = np.asarray(nominal_prices, dtype=np.float64).ravel()
    if prices.shape[0] != nominal.shape[0]:
        raise DataError(
            f"prices has {prices.shape[0]} rows but {nominal.shape[0]} nominal prices given"
        )
    bad = ~(prices > 0)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise DataError(f"prices[{i},{j}] = {prices[i, j]} is not strictly positive")
    bad = ~(nominal > 0)
    if np.any(bad):
        i = int(np.argwhere(bad)[0][0])
        raise DataError(f"nominal_prices[{i}] = {nominal[i]} is not strictly positive")
    n, n_obs = prices.shape
    design = np.empty((n + 1, n_obs))
    design[:n] = np.log(prices / nominal[:, None])
    design[n] = 1.0
    return design


def effective_elasticity(model: ElasticityModel) -> np.ndarray:
    """Augmented matrix ``[B @ C.T + diag(s), log_d_nom]`` of shape (n, n+1)."""
    n = model.n_products
    out = np.empty((n, n + 1))
    out[:, :n] = model.elasticity
    out[:, n] = model.log_d_nom
    return out


def _check_etilde(e_tilde: np.ndarray, dataset: Dataset) -> np.ndarray:
    e_tilde = np.atleast_2d(np.asarray(e_tilde, dtype=np.float64))
    n = dataset.n_products
    if e_tilde.shape != (n, n + 1):
        raise DataError(
            f"E_tilde has shape {e_tilde.shape}, expected {(n, n + 1)} for this dataset"
        )
    return e_tilde


def data_fit(e_tilde: np.ndarray, dataset: Dataset) -> float:
    """Per-observation Poisson fit term ``mean_j sum_i (D*Y - exp(Y))_ij``.

    ``Y = E_tilde @ design`` is the log-rate matrix.  If ``exp`` overflows
    the value is ``-inf`` (never an exception); line searches treat that as
    a rejected step.
    """
    e_tilde = _check_etilde(e_tilde, dataset)
    y = e_tilde @ dataset.design
    with np.errstate(over="ignore", invalid="ignore"):
        value = float(np.sum(dataset.demands * y - np.exp(y)) / dataset.n_obs)
    return value if np.isfinite(value) else -np.inf


def objective(model: ElasticityModel, dataset: Dataset, hyper: Hyperparams) -> float:
    """Regularized objective: data fit minus ``lam/2 * (|B|_F^2 + |C|_F^2)``."""
    if model.rank != hyper.r:
        raise ConfigError(f"model rank {model.rank} does not match hyper.r = {hyper.r}")
    penalty = 0.5 * hyper.lam * (np.sum(model.B**2) + np.sum(model.C**2))
    return data_fit(effective_elasticity(model), dataset) - penalty


def average_log_likelihood(e_tilde: np.ndarray, dataset: Dataset) -> float:
    """Average Poisson log-likelihood, constant ``log(D!)`` terms included.

    Equals :func:`data_fit` minus ``mean_j sum_i log(D_ij!)``, with the
    log-factorial computed via log-gamma so large counts stay exact.
    """
    e_tilde = _check_etilde(e_tilde, dataset)
    y = e_tilde @ dataset.design
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.sum(dataset.demands * y - np.exp(y) - gammaln(dataset.demands + 1.0))
        value = float(total / dataset.n_obs)
    return value if np.isfinite(value) else -np.inf


# --- parameter-block view -------------------------------------------------
#
# Fitters work on the concatenated block X = [B | C | s | log_d_nom] of
# shape (n, 2r + 2).  The round trip through ElasticityModel is lossless.


def model_to_params(model: ElasticityModel) -> np.ndarray:
    """Concatenate model parameters into an (n, 2r + 2) block."""
    return np.hstack(
        [model.B, model.C, model.s[:, None], model.log_d_nom[:, None]]
    )


def model_from_params(x: np.ndarray, r: int) -> ElasticityModel:
    """Inverse of :func:`model_to_params` for a given rank bound."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2 * r + 2:
        raise ConfigError(f"parameter block has shape {x.shape}, expected (n, {2 * r + 2})")
    return ElasticityModel(
        B=x[:, :r], C=x[:, r : 2 * r], s=x[:, 2 * r], log_d_nom=x[:, 2 * r + 1]
    )


def _etilde_from_params(x: np.ndarray, r: int) -> np.ndarray:
    n = x.shape[0]
    out = np.empty((n, n + 1))
    out[:, :n] = x[:, :r] @ x[:, r : 2 * r].T
    out[:, :n][np.diag_indices(n)] += x[:, 2 * r]
    out[:, n] = x[:, 2 * r + 1]
    return out


def _objective_params(x: np.ndarray, dataset: Dataset, r: int, lam: float) -> float:
    penalty = 0.5 * lam * np.sum(x[:, : 2 * r] ** 2)
    return data_fit(_etilde_from_params(x, r), dataset) - penalty


def _delta(e_tilde: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Gradient of the data-fit term with respect to E_tilde.

    Uses the cached ``D @ design.T`` so each evaluation costs two dense
    matrix products and an elementwise exp.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        rates = np.exp(e_tilde @ dataset.design)
        return (dataset.demand_design_t - rates @ dataset.design.T) / dataset.n_obs


def _gradient_params(x: np.ndarray, dataset: Dataset, r: int, lam: float) -> np.ndarray:
    n = x.shape[0]
    delta = _delta(_etilde_from_params(x, r), dataset)
    delta_e = delta[:, :n]
    grad = np.empty_like(x)
    grad[:, :r] = delta_e @ x[:, r : 2 * r] - lam * x[:, :r]
    grad[:, r : 2 * r] = delta_e.T @ x[:, :r] - lam * x[:, r : 2 * r]
    grad[:, 2 * r] = np.diagonal(delta_e)
    grad[:, 2 * r + 1] = delta[:, n]
    return grad


def gradient(model: ElasticityModel, dataset: Dataset, hyper: Hyperparams) -> np.ndarray:
    """Gradient of :func:`objective` as an (n, 2r + 2) parameter block.

    Blocks, in order: with ``delta`` the data-fit gradient with respect to
    the augmented matrix and ``delta_e`` its first n columns, the result is
    ``[delta_e @ C - lam B, delta_e.T @ B - lam C, diag(delta_e),
    last column of delta]``.  A non-finite result is returned as-is; the
    caller decides how to react.
    """
    if model.rank != hyper.r:
        raise ConfigError(f"model rank {model.rank} does not match hyper.r = {hyper.r}")
    if dataset.n_products != model.n_products:
        raise DataError(
            f"model has {model.n_products} products, dataset has {dataset.n_products}"
        )
    return _gradient_params(model_to_params(model), dataset, hyper.r, hyper.lam)
