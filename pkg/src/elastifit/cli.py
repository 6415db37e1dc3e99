"""Command-line front end.

Subcommands: ``synth`` (generate a synthetic instance), ``fit`` (estimate a
model from demand and price CSVs), ``eval-ll`` (score a saved model on
data), ``cv-sweep`` (cross-validated grid over rank and regularization,
optionally with pricing performance against a truth file), and ``price``
(optimal price changes under a saved model).

Exit codes: 0 on success, 2 for usage or configuration errors, 3 for data
errors, 4 for convergence failures.  The ``ELASTIFIT_THREADS`` environment
variable caps how many sweep cells run concurrently; outputs are identical
for any setting.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .core import (
    Dataset,
    Hyperparams,
    assemble_design,
    average_log_likelihood,
    data_fit,
    effective_elasticity,
    objective,
)
from .errors import ConfigError, ConvergenceError, DataError
from .evaluation import PricingSpec, cross_validate, expected_profit, solve_pricing
from .fit import FitConfig, _full_rank_ascent, fit_alternating, fit_gradient_ascent
from .io import load_model, model_from_etilde, read_matrix, read_vector, save_model, write_matrix
from .synth import generate_synthetic

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4

DEFAULT_PI_BOUND = float(np.log(1.2))  # price changes of up to +/- 20 percent


def _thread_cap() -> int:
    raw = os.environ.get("ELASTIFIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"ELASTIFIT_THREADS must be an integer, got {raw!r}")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8", newline="\n")


def _load_dataset(args) -> tuple[Dataset, np.ndarray]:
    demands = read_matrix(args.demands, integer=True)
    prices = read_matrix(args.prices)
    if np.any(prices <= 0):
        i, j = np.argwhere(prices <= 0)[0]
        raise DataError(f"{args.prices}: prices[{i},{j}] = {prices[i, j]} is not positive")
    if args.nominal_prices is not None:
        p_nom = read_vector(args.nominal_prices)
    else:
        p_nom = np.exp(np.log(prices).mean(axis=1))
    return Dataset(demands, assemble_design(prices, p_nom)), p_nom


def _fit_config(args) -> FitConfig:
    return FitConfig(
        eps_rel=args.eps_rel,
        eps_abs=args.eps_abs,
        max_iters=args.max_iters,
        seed=args.seed,
    )


def cmd_synth(args) -> None:
    instance = generate_synthetic(args.n, args.n_obs, args.r_syn, args.seed)
    out = _out_dir(args)
    n, n_obs = instance.dataset.n_products, instance.dataset.n_obs
    obs_header = [f"obs{j}" for j in range(n_obs)] if args.header else None
    prices = instance.p_nom[:, None] * np.exp(instance.dataset.design[:n])
    write_matrix(out / "demands.csv", instance.dataset.demands, obs_header)
    write_matrix(out / "prices.csv", prices, obs_header)
    write_matrix(out / "nominal_prices.csv", instance.p_nom, ["p_nom"] if args.header else None)
    write_matrix(out / "costs.csv", instance.cost, ["cost"] if args.header else None)
    save_model(
        out / "truth.json",
        instance.truth,
        lam=None,
        fit_meta={"method": "synthetic-truth", "seed": args.seed},
    )
    print(f"wrote demands, prices, nominal_prices, costs, truth to {out}")


def cmd_fit(args) -> None:
    dataset, _ = _load_dataset(args)
    config = _fit_config(args)
    if args.method in ("ga", "am") and (args.r is None or args.lam is None):
        raise ConfigError("--r and --lambda are required for methods ga and am")
    started = time.perf_counter()
    if args.method == "full":
        e_tilde, trace, steps, termination = _full_rank_ascent(dataset, config)
        model = model_from_etilde(e_tilde)
        final = trace[-1]
        iterations, lam = len(steps), None
    else:
        hyper = Hyperparams(r=args.r, lam=args.lam)
        fitter = fit_gradient_ascent if args.method == "ga" else fit_alternating
        if args.method == "am":
            report = fit_alternating(dataset, hyper, config, args.outer_iters)
        else:
            report = fitter(dataset, hyper, config)
        model = report.model
        trace, steps = report.objective_trace, report.step_trace
        termination = report.termination
        final = report.objective
        iterations, lam = report.iterations, args.lam
    elapsed = time.perf_counter() - started
    out = _out_dir(args)
    meta = {
        "method": args.method,
        "iterations": iterations,
        "final_objective": final,
        "seed": args.seed,
        "eps_rel": args.eps_rel,
        "eps_abs": args.eps_abs,
    }
    save_model(out / "model.json", model, lam=lam, fit_meta=meta)
    _write_json(
        out / "report.json",
        {
            **meta,
            "termination": termination.value,
            "elapsed_seconds": elapsed,
            "objective_trace": [float(v) for v in trace],
            "step_trace": [float(v) for v in steps],
        },
    )
    print(f"final objective: {final:.17g}")


def cmd_eval_ll(args) -> None:
    dataset, _ = _load_dataset(args)
    model, _ = load_model(args.model)
    if model.n_products != dataset.n_products:
        raise DataError(
            f"model has {model.n_products} products, data has {dataset.n_products}"
        )
    value = average_log_likelihood(effective_elasticity(model), dataset)
    print(f"average log-likelihood: {value:.17g}")


def _parse_grid(text: str, kind, name: str) -> list:
    try:
        values = [kind(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"{name} must be a comma-separated list, got {text!r}")
    if not values:
        raise ConfigError(f"{name} must be nonempty")
    return values


def _best_cell(cells: list[tuple[int, float]], values: list[float]) -> tuple[int, float]:
    best = None
    for (r, lam), v in zip(cells, values):
        if best is None or v > best[2] or (
            v == best[2] and (r < best[0] or (r == best[0] and lam > best[1]))
        ):
            best = (r, lam, v)
    return best[0], best[1]


def cmd_cv_sweep(args) -> None:
    dataset, p_nom = _load_dataset(args)
    config = _fit_config(args)
    r_grid = _parse_grid(args.r_grid, int, "--r-grid")
    lam_grid = _parse_grid(args.lambda_grid, float, "--lambda-grid")
    spec = truth_pair = None
    if args.truth is not None:
        if args.costs is None:
            raise ConfigError("--costs is required when --truth is given")
        truth_model, _ = load_model(args.truth)
        cost = read_vector(args.costs)
        n = dataset.n_products
        spec = PricingSpec(
            p_nom=p_nom,
            cost=cost,
            pi_min=np.full(n, args.pi_min),
            pi_max=np.full(n, args.pi_max),
        )
        truth_pair = (truth_model.elasticity, truth_model.d_nom)
    cells = [(r, lam) for r in r_grid for lam in lam_grid]

    def run_cell(cell):
        r, lam = cell
        try:
            return cross_validate(
                dataset,
                Hyperparams(r=r, lam=lam),
                args.k_folds,
                config,
                method=args.method,
                outer_iters=args.outer_iters,
                spec=spec,
                truth=truth_pair,
                starts=args.starts,
            )
        except ConvergenceError as exc:
            raise ConvergenceError(f"cell (r={r}, lambda={lam:g}): {exc}") from exc

    with ThreadPoolExecutor(max_workers=_thread_cap()) as pool:
        results = list(pool.map(run_cell, cells))

    lls = [res.log_likelihood for res in results]
    best_ll = _best_cell(cells, lls)
    header = ["r", "lambda", "cv_log_likelihood"]
    if spec is not None:
        profits = [res.profit for res in results]
        best_profit = _best_cell(cells, profits)
        header += ["cv_profit"]
    header += ["best_ll"] + (["best_profit"] if spec is not None else [])

    lines = [",".join(header)]
    for cell, res in zip(cells, results):
        r, lam = cell
        row = [str(r), format(lam, ".17g"), format(res.log_likelihood, ".17g")]
        if spec is not None:
            row.append(format(res.profit, ".17g"))
        row.append(str(int(cell == best_ll)))
        if spec is not None:
            row.append(str(int(cell == best_profit)))
        lines.append(",".join(row))
    out = _out_dir(args)
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    print(f"best by log-likelihood: r={best_ll[0]} lambda={best_ll[1]:g}")
    if spec is not None:
        print(f"best by profit: r={best_profit[0]} lambda={best_profit[1]:g}")


def cmd_price(args) -> None:
    model, _ = load_model(args.model)
    n = model.n_products
    cost = read_vector(args.costs)
    p_nom = read_vector(args.nominal_prices)
    if cost.shape != (n,) or p_nom.shape != (n,):
        raise DataError(
            f"model has {n} products; costs has {cost.shape[0]}, "
            f"nominal prices has {p_nom.shape[0]}"
        )
    spec = PricingSpec(
        p_nom=p_nom,
        cost=cost,
        pi_min=np.full(n, args.pi_min),
        pi_max=np.full(n, args.pi_max),
    )
    pi = solve_pricing(model.elasticity, model.d_nom, spec, starts=args.starts, seed=args.seed)
    profit = expected_profit(pi, model.elasticity, model.d_nom, spec)
    out = _out_dir(args)
    table = np.column_stack([pi, p_nom * np.exp(pi)])
    write_matrix(
        out / "recommended_prices.csv",
        table,
        ["pi_star", "price"] if args.header else None,
    )
    _write_json(
        out / "pricing.json",
        {
            "profit": profit,
            "pi_min": args.pi_min,
            "pi_max": args.pi_max,
            "starts": args.starts,
            "seed": args.seed,
        },
    )
    print(f"model-predicted profit: {profit:.17g}")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--demands", required=True, help="CSV of integer demand counts (rows = products)")
    p.add_argument("--prices", required=True, help="CSV of positive prices (rows = products)")
    p.add_argument(
        "--nominal-prices",
        help="CSV column of nominal prices; default: exp of the mean log price per product",
    )


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps-rel", type=float, default=1e-3)
    p.add_argument("--eps-abs", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--outer-iters", type=int, default=5, help="alternating-maximization rounds")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastifit",
        description="Estimate low-rank plus diagonal price-elasticity matrices "
        "from Poisson demand counts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic instance")
    p.add_argument("--n", type=int, required=True, help="number of products")
    p.add_argument("--N", dest="n_obs", type=int, required=True, help="number of observations")
    p.add_argument("--r-syn", type=int, required=True, help="true rank of the low-rank part")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--header", action="store_true", help="write CSV header rows")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit an elasticity model")
    _add_data_flags(p)
    p.add_argument("--method", choices=("ga", "am", "full"), default="ga")
    p.add_argument("--r", type=int, help="rank bound (ga, am)")
    p.add_argument("--lambda", dest="lam", type=float, help="regularization strength (ga, am)")
    _add_fit_flags(p)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval-ll", help="average log-likelihood of a saved model on data")
    _add_data_flags(p)
    p.add_argument("--model", required=True, help="model JSON file")
    p.set_defaults(func=cmd_eval_ll)

    p = sub.add_parser("cv-sweep", help="cross-validated grid over rank and regularization")
    _add_data_flags(p)
    p.add_argument("--r-grid", required=True, help="comma-separated ranks, e.g. 6,8,10")
    p.add_argument("--lambda-grid", required=True, help="comma-separated strengths, e.g. 1e-3,1e-2")
    p.add_argument("--K", dest="k_folds", type=int, default=5, help="fold count")
    p.add_argument("--method", choices=("ga", "am"), default="ga")
    p.add_argument("--truth", help="truth model JSON; adds cross-validated profit")
    p.add_argument("--costs", help="CSV column of unit costs (needed with --truth)")
    p.add_argument("--pi-min", type=float, default=-DEFAULT_PI_BOUND)
    p.add_argument("--pi-max", type=float, default=DEFAULT_PI_BOUND)
    p.add_argument("--starts", type=int, default=8, help="pricing multistart count")
    _add_fit_flags(p)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_cv_sweep)

    p = sub.add_parser("price", help="profit-maximizing price changes under a saved model")
    p.add_argument("--model", required=True, help="model JSON file")
    p.add_argument("--costs", required=True, help="CSV column of unit costs")
    p.add_argument("--nominal-prices", required=True, help="CSV column of nominal prices")
    p.add_argument("--pi-min", type=float, default=-DEFAULT_PI_BOUND)
    p.add_argument("--pi-max", type=float, default=DEFAULT_PI_BOUND)
    p.add_argument("--starts", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--header", action="store_true", help="write a CSV header row")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_price)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
