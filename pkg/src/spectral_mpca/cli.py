"""Command-line interface: simulate, fit, impute, forecast, benchmark, eval.

All commands read an optional JSON configuration (see
:mod:`spectral_mpca.config`); command-line flags override file values.
Exit codes: 0 success, 2 configuration or usage error, 3 unreadable or
inconsistent data/model files, 4 numerical failure during estimation.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__, benchmark, config, serialize
from .core import (
    InsufficientDataError,
    NumericalError,
    SolverError,
    validate_observations,
)
from .pipeline import fit
from .simgen import generate_panel
from .tasks import UndefinedMetricError, forecast, impute, nmse

__all__ = ["main", "build_parser", "resolve_threads"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def resolve_threads(value: int | None) -> int:
    """Thread count: explicit flag, then SPECTRAL_MPCA_THREADS, then all cores."""
    if value is None:
        env = os.environ.get("SPECTRAL_MPCA_THREADS", "").strip()
        if env:
            try:
                value = int(env)
            except ValueError as exc:
                raise config.ConfigError(
                    f"SPECTRAL_MPCA_THREADS must be an integer, got {env!r}"
                ) from exc
        else:
            return os.cpu_count() or 1
    if value < 1:
        raise config.ConfigError("thread count must be >= 1")
    return value


def _load_document(path: str | None) -> dict:
    return config.load_config(path) if path else {}


def _read_panel(path: str):
    obs = serialize.read_panel_csv(path)
    report = validate_observations(obs)
    if not report.ok:
        shown = "; ".join(report.issues[:5])
        more = "" if len(report.issues) <= 5 else f" (+{len(report.issues) - 5} more)"
        raise serialize.DataFormatError(f"{path}: {shown}{more}")
    return obs


def cmd_simulate(args) -> int:
    doc = _load_document(args.config)
    sim = config.sim_config_from(
        doc,
        case=args.case,
        n_curves=args.curves,
        n_subjects=args.subjects,
        seed=args.seed,
        n_range=tuple(args.n_range) if args.n_range else None,
    )
    panel = generate_panel(sim, n_extra_curves=args.extra_curves)
    serialize.write_panel_csv(panel.obs, args.out_obs)
    n_rows = int(panel.obs.counts().sum())
    print(
        f"simulated case {sim.case}: {sim.n_subjects} subjects x "
        f"{panel.n_total_curves} curves, {n_rows} readings -> {args.out_obs}"
    )
    if args.out_truth:
        serialize.save_truth(panel, args.out_truth)
        print(f"latent truth -> {args.out_truth}")
    return EXIT_OK


def cmd_fit(args) -> int:
    doc = _load_document(args.config)
    fitcfg = config.fit_config_from(
        doc,
        n_time_points=args.time_points,
        n_frequencies=args.frequencies,
        n_components=args.components,
        lag_window=args.lag_window,
    )
    obs = _read_panel(args.observations)
    model = fit(obs, fitcfg)
    serialize.save_model(model, args.out)
    lags = list(model.bank.max_lags)
    norms = [float(model.bank.lag_norms_sq(k).sum()) for k in range(model.n_components)]
    print(
        f"fitted {obs.n_subjects} subjects x {obs.n_curves} curves: "
        f"K={model.n_components} L={lags} h_max={model.lag_window}"
    )
    print(
        "filter norm sums "
        + " ".join(f"k={k + 1}:{v:.4f}" for k, v in enumerate(norms))
        + f"; cg iterations {model.diagnostics.get('cg_iterations')}"
    )
    print(f"model -> {args.out}")
    return EXIT_OK


def cmd_impute(args) -> int:
    model = serialize.load_model(args.model)
    curves = impute(model)
    serialize.write_curves_csv(curves, model.time_grid, args.out)
    print(
        f"imputed {curves.shape[0]} subjects x {curves.shape[1]} curves -> {args.out}"
    )
    return EXIT_OK


def cmd_forecast(args) -> int:
    if args.horizon < 1:
        raise config.ConfigError("forecast horizon must be >= 1")
    model = serialize.load_model(args.model)
    curves, var_fits = forecast(model, args.horizon, args.var_order)
    serialize.write_curves_csv(
        curves, model.time_grid, args.out, first_curve=model.n_curves + 1
    )
    orders = [v.order for v in var_fits]
    radii = [round(v.spectral_radius, 3) for v in var_fits]
    print(
        f"forecast {args.horizon} steps (curves {model.n_curves + 1}.."
        f"{model.n_curves + args.horizon}); VAR orders {orders}, "
        f"spectral radii {radii} -> {args.out}"
    )
    return EXIT_OK


def cmd_benchmark(args) -> int:
    doc = _load_document(args.config)
    bench = config.benchmark_config_from(
        doc,
        n_replicates=args.reps,
        base_seed=args.seed,
        n_jobs=resolve_threads(args.threads),
    )
    result = benchmark.run_benchmark(bench)
    benchmark.write_results_csv(result, args.out_results)
    benchmark.write_summary_csv(result, args.out_summary)
    for row in result.summary_rows():
        case, J, nrange, method, metric, n_reps, n_failed, mean, std = row
        print(
            f"case {case} J={J} N={nrange} {method}: mean {metric} "
            f"{mean:.4f} (std {std:.4f}, {n_reps - n_failed}/{n_reps} ok)"
        )
    if result.failures:
        print(f"{len(result.failures)} replicate failures recorded", file=sys.stderr)
    print(f"results -> {args.out_results}; summary -> {args.out_summary}")
    return EXIT_OK


def _eval_against_truth(args) -> float:
    truth = serialize.load_truth(args.truth)
    pred = serialize.read_panel_csv(args.predictions)
    if pred.n_subjects != truth.curves.shape[0]:
        raise serialize.DataFormatError(
            f"{args.predictions}: {pred.n_subjects} subjects, truth has "
            f"{truth.curves.shape[0]}"
        )
    grid = truth.site_grid
    evaluated = [
        j for j in range(pred.n_curves) if any(
            pred.times[i][j].size for i in range(pred.n_subjects)
        )
    ]
    if not evaluated:
        raise serialize.DataFormatError(f"{args.predictions}: no curves to evaluate")
    if evaluated[-1] >= truth.n_total_curves:
        raise serialize.DataFormatError(
            f"{args.predictions}: curve {evaluated[-1] + 1} beyond the "
            f"{truth.n_total_curves} truth curves"
        )
    est = np.empty((pred.n_subjects, len(evaluated), grid.size))
    for i in range(pred.n_subjects):
        for jj, j in enumerate(evaluated):
            t, v = pred.times[i][j], pred.values[i][j]
            if t.size == 0:
                raise serialize.DataFormatError(
                    f"{args.predictions}: subject {i + 1} curve {j + 1} empty"
                )
            order = np.argsort(t)
            est[i, jj] = np.interp(grid.points, t[order], v[order])
    return nmse(truth.curves[:, evaluated, :], est, grid)


def _eval_against_observations(args) -> float:
    held = _read_panel(args.observations)
    pred = serialize.read_panel_csv(args.predictions)
    if pred.n_subjects != held.n_subjects:
        raise serialize.DataFormatError("prediction and observation subject counts differ")
    num = 0.0
    den = 0.0
    for i in range(held.n_subjects):
        all_v = np.concatenate([v for v in held.values[i] if v.size])
        center = float(all_v.mean()) if all_v.size else 0.0
        for j in range(held.n_curves):
            t, y = held.times[i][j], held.values[i][j]
            if t.size == 0:
                continue
            if j >= pred.n_curves or pred.times[i][j].size == 0:
                raise serialize.DataFormatError(
                    f"no prediction for subject {i + 1} curve {j + 1}"
                )
            pt, pv = pred.times[i][j], pred.values[i][j]
            order = np.argsort(pt)
            yhat = np.interp(t, pt[order], pv[order])
            num += float(np.sum((y - yhat) ** 2))
            den += float(np.sum((y - center) ** 2))
    if den <= 1e-300:
        raise UndefinedMetricError("held-out observations are constant")
    return num / den


def cmd_eval(args) -> int:
    if (args.truth is None) == (args.observations is None):
        raise config.ConfigError("provide exactly one of --truth / --observations")
    if args.truth is not None:
        name, value = "nmse", _eval_against_truth(args)
    else:
        name, value = "nmse_observed", _eval_against_observations(args)
    print(f"{name} {value!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"metric,value\n{name},{value!r}\n")
        print(f"metrics -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectral-mpca",
        description=(
            "Pooled frequency-domain component analysis for panels of "
            "irregularly observed curve time series: simulate benchmark "
            "panels, fit the filter/score model, impute and forecast "
            "curves, and run Monte Carlo comparisons."
        ),
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="generate a synthetic observation panel")
    ps.add_argument("--config", help="JSON run configuration")
    ps.add_argument("--case", type=int, choices=(1, 2, 3), help="generator case")
    ps.add_argument("--curves", type=int, help="panel length J")
    ps.add_argument("--subjects", type=int, help="number of subjects p")
    ps.add_argument("--seed", type=int, help="generator seed")
    ps.add_argument(
        "--n-range", type=int, nargs=2, metavar=("LO", "HI"),
        help="readings per curve drawn uniformly from LO..HI",
    )
    ps.add_argument(
        "--extra-curves", type=int, default=0,
        help="extra curves past J (forecast evaluation)",
    )
    ps.add_argument("--out-obs", required=True, help="observation CSV path")
    ps.add_argument("--out-truth", help="latent truth artifact path")
    ps.set_defaults(func=cmd_simulate)

    pf = sub.add_parser("fit", help="fit the model to an observation panel")
    pf.add_argument("observations", help="observation CSV")
    pf.add_argument("--config", help="JSON run configuration")
    pf.add_argument("--components", type=int, help="pin the component count K")
    pf.add_argument("--time-points", type=int, help="evaluation grid size")
    pf.add_argument("--frequencies", type=int, help="frequency grid size")
    pf.add_argument("--lag-window", type=int, help="pin the lag window h_max")
    pf.add_argument("--out", required=True, help="model artifact path")
    pf.set_defaults(func=cmd_fit)

    pi = sub.add_parser("impute", help="reconstruct all curves from a model")
    pi.add_argument("model", help="model artifact")
    pi.add_argument("--out", required=True, help="imputed curve CSV path")
    pi.set_defaults(func=cmd_impute)

    pc = sub.add_parser("forecast", help="forecast curves past the panel")
    pc.add_argument("model", help="model artifact")
    pc.add_argument("--horizon", type=int, required=True, help="steps ahead")
    pc.add_argument("--var-order", type=int, default=5, help="max VAR order")
    pc.add_argument("--out", required=True, help="forecast curve CSV path")
    pc.set_defaults(func=cmd_forecast)

    pb = sub.add_parser("benchmark", help="Monte Carlo method comparison")
    pb.add_argument("--config", help="JSON run configuration with a benchmark section")
    pb.add_argument("--reps", type=int, help="replicates per scenario")
    pb.add_argument("--seed", type=int, help="base seed")
    pb.add_argument("--threads", type=int, help="parallel replicate jobs")
    pb.add_argument("--out-results", required=True, help="per-replicate CSV path")
    pb.add_argument("--out-summary", required=True, help="aggregated CSV path")
    pb.set_defaults(func=cmd_benchmark)

    pe = sub.add_parser("eval", help="score predictions against truth or held-out data")
    pe.add_argument("predictions", help="imputed or forecast curve CSV")
    pe.add_argument("--truth", help="latent truth artifact from simulate")
    pe.add_argument("--observations", help="held-out observation CSV")
    pe.add_argument("--out", help="metric CSV path")
    pe.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except config.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (serialize.DataFormatError, InsufficientDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (
        NumericalError,
        SolverError,
        UndefinedMetricError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
