"""Fitting procedures for the regularized Poisson elasticity problem.

Three routes to a locally optimal model:

* :func:`fit_gradient_ascent` -- line-search gradient ascent on the full
  parameter block.  The workhorse; every gradient evaluation is a pair of
  dense matrix products.
* :func:`fit_alternating` -- alternating maximization: with one factor
  fixed the problem is concave in the remaining variables, so each
  half-step is an exact (to tolerance) concave solve.
* :func:`fit_full_rank` -- the unrestricted concave MLE over the whole
  augmented matrix, for small product counts.

The line search is shared: a tentative step ``x + alpha * grad`` is
accepted only if it strictly improves the objective, after which the step
grows by ``gamma``; on rejection it shrinks by ``eta`` and the same
iterate is retried.  A non-finite trial objective counts as a rejection,
which is how exp overflow from over-long steps is absorbed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .core import (
    Dataset,
    ElasticityModel,
    Hyperparams,
    _delta,
    _gradient_params,
    _objective_params,
    data_fit,
    model_from_params,
    model_to_params,
)
from .errors import ConfigError, ConvergenceError, UnboundedObjectiveError

__all__ = [
    "FitConfig",
    "FitReport",
    "Termination",
    "init_model",
    "fit_gradient_ascent",
    "fit_alternating",
    "inner_concave_solve",
    "fit_full_rank",
]

# Below this step size the line search is declared stalled: the current
# iterate is a numerical maximizer along the gradient direction.
_STALL_ALPHA = 1e-300

# Redraw threshold for the alternating-maximization C initialization.
_MIN_COLUMN_NORM = 1e-8


class Termination(enum.Enum):
    """Why a fitter stopped."""

    GRADIENT_TOLERANCE = "gradient_tolerance"
    MAX_ITERS = "max_iters"
    STALLED_LINE_SEARCH = "stalled_line_search"


@dataclass(frozen=True)
class FitConfig:
    """Line-search schedule, termination tolerances, and the init seed.

    Defaults: initial step 1.0, growth 1.2, shrink 1.5, both tolerances
    1e-3.  ``init_spread`` selects whether the Gaussian init parameter
    ``1 / (n sqrt(r))`` is read as a variance (default) or a standard
    deviation.
    """

    alpha0: float = 1.0
    gamma: float = 1.2
    eta: float = 1.5
    eps_rel: float = 1e-3
    eps_abs: float = 1e-3
    max_iters: int = 100_000
    seed: int = 0
    init_spread: str = "variance"

    def __post_init__(self) -> None:
        if not (self.alpha0 > 0):
            raise ConfigError(f"alpha0 must be positive, got {self.alpha0}")
        if not (self.gamma > 1):
            raise ConfigError(f"gamma must exceed 1, got {self.gamma}")
        if not (self.eta > 1):
            raise ConfigError(f"eta must exceed 1, got {self.eta}")
        if not (self.eps_rel > 0 and self.eps_abs > 0):
            raise ConfigError("eps_rel and eps_abs must be positive")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.init_spread not in ("variance", "std"):
            raise ConfigError(f"init_spread must be 'variance' or 'std', got {self.init_spread!r}")


@dataclass(frozen=True)
class FitReport:
    """Outcome of a fit.

    ``objective_trace`` holds the initial objective followed by the value
    after every accepted step, so it is strictly increasing.
    ``step_trace`` holds the step size each accepted step actually used.
    For alternating maximization, ``half_step_objectives`` additionally
    records the objective after each half-step (starting with the initial
    value); it is ``None`` for the other fitters.
    """

    model: ElasticityModel
    objective_trace: np.ndarray
    step_trace: np.ndarray
    iterations: int
    termination: Termination
    half_step_objectives: np.ndarray | None = field(default=None)

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


def _init_sd(n: int, r: int, spread: str) -> float:
    if spread not in ("variance", "std"):
        raise ConfigError(f"spread must be 'variance' or 'std', got {spread!r}")
    base = 1.0 / (n * np.sqrt(r))
    return float(np.sqrt(base)) if spread == "variance" else float(base)


def init_model(
    n: int, hyper: Hyperparams, seed: int, spread: str = "variance"
) -> ElasticityModel:
    """Random starting model: Gaussian factors, s = -1, log_d_nom = 0.

    Factor entries are IID normal with mean zero and variance
    ``1 / (n sqrt(r))`` (or standard deviation, with ``spread="std"``).
    Deterministic for a given seed.
    """
    if n < 1:
        raise ConfigError(f"n must be at least 1, got {n}")
    sd = _init_sd(n, hyper.r, spread)
    gen = rng.stream(seed)
    B = sd * gen.standard_normal((n, hyper.r))
    C = sd * gen.standard_normal((n, hyper.r))
    return ElasticityModel(B=B, C=C, s=-np.ones(n), log_d_nom=np.zeros(n))


def _line_search_ascent(
    x0: np.ndarray,
    value_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    *,
    alpha0: float,
    gamma: float,
    eta: float,
    eps_rel: float,
    eps_abs: float,
    max_iters: int,
    value_cap: float | None = None,
) -> tuple[np.ndarray, list[float], list[float], Termination]:
    """Shared ascent loop.  Returns (x, objective trace, step trace, why)."""
    x = np.array(x0, dtype=np.float64)
    value = value_fn(x)
    if not np.isfinite(value):
        raise ConvergenceError("objective is not finite at the starting point")
    trace = [value]
    steps: list[float] = []
    grad = grad_fn(x)
    alpha = alpha0
    iterations = 0
    while True:
        gnorm = np.linalg.norm(grad)
        if not np.isfinite(gnorm):
            return x, trace, steps, Termination.STALLED_LINE_SEARCH
        if gnorm <= eps_rel * np.linalg.norm(x) + eps_abs:
            return x, trace, steps, Termination.GRADIENT_TOLERANCE
        if iterations >= max_iters:
            return x, trace, steps, Termination.MAX_ITERS
        while True:
            trial = x + alpha * grad
            trial_value = value_fn(trial)
            if trial_value > value:
                x = trial
                value = trial_value
                steps.append(alpha)
                trace.append(value)
                alpha *= gamma
                break
            alpha /= eta
            if alpha < _STALL_ALPHA:
                return x, trace, steps, Termination.STALLED_LINE_SEARCH
        if value_cap is not None and value > value_cap:
            raise UnboundedObjectiveError(
                f"objective exceeded {value_cap:g}; the problem is unbounded on this data"
            )
        grad = grad_fn(x)
        iterations += 1


def fit_gradient_ascent(
    dataset: Dataset,
    hyper: Hyperparams,
    config: FitConfig | None = None,
    init: ElasticityModel | None = None,
) -> FitReport:
    """Line-search gradient ascent on the full parameter block.

    Stops when the gradient norm falls below
    ``eps_rel * |X|_F + eps_abs``, the accepted-step count reaches
    ``max_iters``, or the line search stalls.  ``init`` overrides the
    seeded random initialization (useful for warm starts).
    """
    config = config or FitConfig()
    if init is None:
        init = init_model(dataset.n_products, hyper, config.seed, config.init_spread)
    if init.n_products != dataset.n_products:
        raise ConfigError(
            f"init model has {init.n_products} products, dataset has {dataset.n_products}"
        )
    r, lam = hyper.r, hyper.lam
    x, trace, steps, why = _line_search_ascent(
        model_to_params(init),
        lambda x: _objective_params(x, dataset, r, lam),
        lambda x: _gradient_params(x, dataset, r, lam),
        alpha0=config.alpha0,
        gamma=config.gamma,
        eta=config.eta,
        eps_rel=config.eps_rel,
        eps_abs=config.eps_abs,
        max_iters=config.max_iters,
    )
    return FitReport(
        model=model_from_params(x, r),
        objective_trace=np.asarray(trace),
        step_trace=np.asarray(steps),
        iterations=len(steps),
        termination=why,
    )


# --- alternating maximization ----------------------------------------------

FIX_B = "B"
FIX_C = "C"


def _free_block(x: np.ndarray, which_fixed: str, r: int) -> np.ndarray:
    factor = x[:, r : 2 * r] if which_fixed == FIX_B else x[:, :r]
    return np.hstack([factor, x[:, 2 * r :]])


def _assemble_params(
    block: np.ndarray, fixed_factor: np.ndarray, which_fixed: str, r: int
) -> np.ndarray:
    free = block[:, :r]
    tail = block[:, r:]
    if which_fixed == FIX_B:
        return np.hstack([fixed_factor, free, tail])
    return np.hstack([free, fixed_factor, tail])


def _inner_value_grad(
    dataset: Dataset, fixed_factor: np.ndarray, which_fixed: str, r: int, lam: float
):
    """Objective and restricted gradient over the free block.

    The objective is the full regularized objective (the fixed factor's
    penalty is a constant offset), so traces from consecutive half-steps
    are directly comparable.
    """

    def value(block: np.ndarray) -> float:
        return _objective_params(
            _assemble_params(block, fixed_factor, which_fixed, r), dataset, r, lam
        )

    def grad(block: np.ndarray) -> np.ndarray:
        x = _assemble_params(block, fixed_factor, which_fixed, r)
        full = _gradient_params(x, dataset, r, lam)
        return _free_block(full, which_fixed, r)

    return value, grad


def inner_concave_solve(
    dataset: Dataset,
    fixed_factor: np.ndarray,
    which_fixed: str,
    warm_start: np.ndarray,
    lam: float,
    tol: float,
    config: FitConfig | None = None,
) -> np.ndarray:
    """Maximize over one factor plus (s, log_d_nom) with the other fixed.

    ``which_fixed`` is ``"B"`` or ``"C"``; ``warm_start`` and the return
    value are (n, r + 2) blocks ``[free factor | s | log_d_nom]``.  The
    subproblem is concave, solved by the shared line-search ascent to
    restricted-gradient norm ``tol * |block|_F + tol``.
    """
    block, _, _, _ = _inner_solve(
        dataset, fixed_factor, which_fixed, warm_start, lam, tol, tol, config
    )
    return block


def _inner_solve(
    dataset: Dataset,
    fixed_factor: np.ndarray,
    which_fixed: str,
    warm_start: np.ndarray,
    lam: float,
    tol_rel: float,
    tol_abs: float,
    config: FitConfig | None = None,
) -> tuple[np.ndarray, list[float], list[float], Termination]:
    if which_fixed not in (FIX_B, FIX_C):
        raise ConfigError(f"which_fixed must be {FIX_B!r} or {FIX_C!r}, got {which_fixed!r}")
    config = config or FitConfig()
    fixed_factor = np.asarray(fixed_factor, dtype=np.float64)
    if not np.all(np.isfinite(fixed_factor)):
        raise ConfigError("fixed factor contains non-finite entries")
    r = fixed_factor.shape[1]
    warm_start = np.asarray(warm_start, dtype=np.float64)
    if warm_start.shape != (fixed_factor.shape[0], r + 2):
        raise ConfigError(
            f"warm start has shape {warm_start.shape}, expected {(fixed_factor.shape[0], r + 2)}"
        )
    value_fn, grad_fn = _inner_value_grad(dataset, fixed_factor, which_fixed, r, lam)
    return _line_search_ascent(
        warm_start,
        value_fn,
        grad_fn,
        alpha0=config.alpha0,
        gamma=config.gamma,
        eta=config.eta,
        eps_rel=tol_rel,
        eps_abs=tol_abs,
        max_iters=config.max_iters,
    )


def fit_alternating(
    dataset: Dataset,
    hyper: Hyperparams,
    config: FitConfig | None = None,
    outer_iters: int = 5,
) -> FitReport:
    """Alternating maximization over (B, s, log_d_nom) and (C, s, log_d_nom).

    C starts from the same distribution as :func:`init_model`, with any
    near-zero column redrawn so the first subproblem sees a usable factor.
    Each half-step solves its concave subproblem to the configured
    tolerances, so the objective never decreases across half-steps.  The
    outer loop ends when the objective change over a full iteration drops
    below ``eps_rel * |objective| + eps_abs`` (reported as
    GRADIENT_TOLERANCE) or after ``outer_iters`` rounds (MAX_ITERS).  An
    inner-solver stall ends the run early with the best model so far.
    """
    config = config or FitConfig()
    if outer_iters < 1:
        raise ConfigError(f"outer_iters must be at least 1, got {outer_iters}")
    n, r, lam = dataset.n_products, hyper.r, hyper.lam

    start = init_model(n, hyper, config.seed, config.init_spread)
    C = np.array(start.C)
    redraw = rng.stream(config.seed, 2)
    sd = _init_sd(n, r, config.init_spread)
    for k in range(r):
        while np.linalg.norm(C[:, k]) < _MIN_COLUMN_NORM:
            C[:, k] = sd * redraw.standard_normal(n)
    x = model_to_params(
        ElasticityModel(B=start.B, C=C, s=start.s, log_d_nom=start.log_d_nom)
    )

    value0 = _objective_params(x, dataset, r, lam)
    if not np.isfinite(value0):
        raise ConvergenceError("objective is not finite at the starting point")
    trace = [value0]
    steps: list[float] = []
    half_objs = [value0]
    why = Termination.MAX_ITERS
    for _ in range(outer_iters):
        previous = trace[-1]
        failed = False
        for which_fixed in (FIX_C, FIX_B):
            fixed = x[:, r : 2 * r] if which_fixed == FIX_C else x[:, :r]
            warm = _free_block(x, which_fixed, r)
            block, inner_trace, inner_steps, inner_why = _inner_solve(
                dataset, fixed, which_fixed, warm, lam,
                config.eps_rel, config.eps_abs, config,
            )
            x = _assemble_params(block, fixed, which_fixed, r)
            trace.extend(inner_trace[1:])
            steps.extend(inner_steps)
            half_objs.append(trace[-1])
            if inner_why is not Termination.GRADIENT_TOLERANCE:
                why = inner_why
                failed = True
                break
        if failed:
            break
        if abs(trace[-1] - previous) <= config.eps_rel * abs(trace[-1]) + config.eps_abs:
            why = Termination.GRADIENT_TOLERANCE
            break
    return FitReport(
        model=model_from_params(x, r),
        objective_trace=np.asarray(trace),
        step_trace=np.asarray(steps),
        iterations=len(steps),
        termination=why,
        half_step_objectives=np.asarray(half_objs),
    )


def _full_rank_ascent(
    dataset: Dataset, config: FitConfig
) -> tuple[np.ndarray, list[float], list[float], Termination]:
    n = dataset.n_products
    return _line_search_ascent(
        np.zeros((n, n + 1)),
        lambda e: data_fit(e, dataset),
        lambda e: _delta(e, dataset),
        alpha0=config.alpha0,
        gamma=config.gamma,
        eta=config.eta,
        eps_rel=config.eps_rel,
        eps_abs=config.eps_abs,
        max_iters=config.max_iters,
        value_cap=1e15,
    )


def fit_full_rank(dataset: Dataset, config: FitConfig | None = None) -> np.ndarray:
    """Unrestricted concave MLE over the augmented matrix.

    Runs the shared line-search ascent directly on ``E_tilde`` from a zero
    start, with the data-fit gradient.  Raises
    :class:`UnboundedObjectiveError` if the objective passes 1e15, which
    can only happen on degenerate data.
    """
    x, _, _, _ = _full_rank_ascent(dataset, config or FitConfig())
    return x
