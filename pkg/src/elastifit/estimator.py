"""Scikit-learn style front end.

Wraps the fitting routines in an estimator with the usual
``fit`` / ``predict`` / ``score`` / ``get_params`` surface, so the model
drops into pipelines, grid searches, and cross-validation tooling.
Samples are observation periods: ``X`` holds prices with shape
(n_periods, n_products) and ``y`` holds the matching demand counts.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .core import Dataset, assemble_design, average_log_likelihood, effective_elasticity, Hyperparams
from .errors import DataError
from .fit import FitConfig, fit_alternating, fit_full_rank, fit_gradient_ascent

__all__ = ["PoissonElasticityEstimator"]


class PoissonElasticityEstimator(BaseEstimator, RegressorMixin):
    """Price-elasticity model with Poisson demand and low-rank structure.

    Demand counts are modeled as Poisson with log-rates affine in log
    price changes from nominal, and the elasticity matrix is constrained
    to ``B @ C.T + diag(s)`` with rank bound ``rank`` (except for
    ``method="full"``, which fits the unrestricted matrix).

    Parameters
    ----------
    rank : int
        Rank bound of the low-rank part.
    lam : float
        Regularization strength on the squared factor norms.
    method : {"ga", "am", "full"}
        Line-search gradient ascent, alternating maximization, or the
        full-rank concave MLE.
    nominal_prices : array-like of shape (n_products,), optional
        Reference prices.  When omitted, the exp of the per-product mean
        log price of the training data is used.
    eps_rel, eps_abs : float
        Termination tolerances on the gradient norm.
    max_iters : int
        Cap on accepted ascent steps.
    outer_iters : int
        Alternating-maximization rounds (``method="am"`` only).
    seed : int
        Seed for the random initialization.

    Attributes
    ----------
    elasticity_ : (n, n) array
        Estimated elasticity matrix.
    d_nom_ : (n,) array
        Estimated expected demand at nominal prices.
    p_nom_ : (n,) array
        Nominal prices used by the fit.
    model_ : ElasticityModel or None
        The factored model; ``None`` for ``method="full"``.
    report_ : FitReport or None
        Trace and termination details; ``None`` for ``method="full"``.
    """

    def __init__(
        self,
        rank: int = 10,
        lam: float = 0.1,
        method: str = "ga",
        nominal_prices=None,
        eps_rel: float = 1e-3,
        eps_abs: float = 1e-3,
        max_iters: int = 100_000,
        outer_iters: int = 5,
        seed: int = 0,
    ):
        self.rank = rank
        self.lam = lam
        self.method = method
        self.nominal_prices = nominal_prices
        self.eps_rel = eps_rel
        self.eps_abs = eps_abs
        self.max_iters = max_iters
        self.outer_iters = outer_iters
        self.seed = seed

    def _validate_prices(self, X, n_expected=None):
        X = check_array(X, dtype=np.float64)
        if n_expected is not None and X.shape[1] != n_expected:
            raise DataError(f"X has {X.shape[1]} products, expected {n_expected}")
        if not np.all(X > 0):
            i, j = np.argwhere(~(X > 0))[0]
            raise DataError(f"price X[{i},{j}] = {X[i, j]} is not strictly positive")
        return X

    def fit(self, X, y):
        """Fit on prices ``X`` and demand counts ``y``, both (N, n)."""
        X = self._validate_prices(X)
        y = check_array(y, dtype=np.float64)
        if y.shape != X.shape:
            raise DataError(f"y has shape {y.shape}, expected {X.shape}")
        if self.nominal_prices is not None:
            p_nom = np.asarray(self.nominal_prices, dtype=np.float64).ravel()
        else:
            p_nom = np.exp(np.log(X).mean(axis=0))
        dataset = Dataset(y.T, assemble_design(X.T, p_nom))
        config = FitConfig(
            eps_rel=self.eps_rel,
            eps_abs=self.eps_abs,
            max_iters=self.max_iters,
            seed=self.seed,
        )
        if self.method == "full":
            e_tilde = fit_full_rank(dataset, config)
            self.model_ = None
            self.report_ = None
        else:
            hyper = Hyperparams(r=self.rank, lam=self.lam)
            if self.method == "ga":
                self.report_ = fit_gradient_ascent(dataset, hyper, config)
            elif self.method == "am":
                self.report_ = fit_alternating(dataset, hyper, config, self.outer_iters)
            else:
                raise DataError(f"unknown method {self.method!r}")
            self.model_ = self.report_.model
            e_tilde = effective_elasticity(self.model_)
        n = dataset.n_products
        self.n_features_in_ = n
        self.p_nom_ = p_nom
        self.elasticity_ = e_tilde[:, :n]
        self.log_d_nom_ = e_tilde[:, n]
        self.d_nom_ = np.exp(self.log_d_nom_)
        return self

    def predict(self, X):
        """Expected demand counts (Poisson rates) at the given prices."""
        check_is_fitted(self, "elasticity_")
        X = self._validate_prices(X, n_expected=self.n_features_in_)
        pi = np.log(X / self.p_nom_)
        return np.exp(pi @ self.elasticity_.T + self.log_d_nom_)

    def score(self, X, y):
        """Average Poisson log-likelihood of ``y`` given prices ``X``.

        Higher is better; includes the count-factorial terms, so values
        from different demand matrices are comparable.
        """
        check_is_fitted(self, "elasticity_")
        X = self._validate_prices(X, n_expected=self.n_features_in_)
        y = check_array(y, dtype=np.float64)
        dataset = Dataset(y.T, assemble_design(X.T, self.p_nom_))
        e_tilde = np.hstack([self.elasticity_, self.log_d_nom_[:, None]])
        return average_log_likelihood(e_tilde, dataset)
