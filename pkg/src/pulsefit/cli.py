"""Command-line front end.

Commands:
  fit        estimate a recorded series (CSV with header ``time,value``)
  gamma      trace the gamma curve at a fixed basal level
  basal      joint basal-level / rate estimation curves
  synth      generate a synthetic benchmark instance
  experiment run a Monte-Carlo benchmark and write its report files

All outputs embed the tool version, the effective configuration, and the
seed; numbers are serialized as shortest round-trip decimals, so rerunning
a command with the same seed reproduces the output files byte for byte.
The environment variable PULSE_SEED is the fallback for --seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import RUNNERS, to_jsonable, write_report
from .model import SamplingGrid, TimeSeries
from .onestep import (
    DegenerateScanError,
    ScanConfig,
    default_eps_reg,
    estimate_basal,
    estimate_first_order,
    gamma_curve,
    scan_newton_quotient,
)
from .synth import EXPERIMENTS as SYNTH_EXPERIMENTS
from .synth import generate, make_spec

# rates are in 1/time units of the input; these defaults suit
# luteinizing-hormone series sampled in minutes
DEFAULT_B1_INTERVAL = (0.23, 0.69)
DEFAULT_B2_INTERVAL = (0.0087, 0.014)
DEFAULT_OMEGA_INTERVAL = (0.05, 2.5)

DESK_TRIALS = {"first_order": 100, "point_estimates": 50, "basal": 50, "robust": 25}
FULL_TRIALS = {"first_order": 400, "point_estimates": 200, "basal": 200, "robust": 50}


def read_series_csv(path) -> TimeSeries:
    """Parse a ``time,value`` CSV; malformed content raises ValueError with
    the offending line number."""
    times = []
    values = []
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        if [h.strip().lower() for h in header[:2]] != ["time", "value"]:
            raise ValueError(f"{path}: line 1: expected header 'time,value'")
        for ln, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}: line {ln}: expected two fields 'time,value'")
            try:
                t = float(row[0])
                v = float(row[1])
            except ValueError:
                raise ValueError(f"{path}: line {ln}: non-numeric field") from None
            if times and not t > times[-1]:
                raise ValueError(
                    f"{path}: line {ln}: times must be strictly increasing"
                )
            times.append(t)
            values.append(v)
    if len(times) < 3:
        raise ValueError(f"{path}: need at least 3 data rows")
    return TimeSeries(SamplingGrid(np.array(times)), np.array(values))


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(to_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_series_csv(path, times, values):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "value"])
        for t, v in zip(times, values):
            writer.writerow([repr(float(t)), repr(float(v))])


def _interval(text_pair):
    lo, hi = float(text_pair[0]), float(text_pair[1])
    return (lo, hi)


def _resolve_seed(args) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("PULSE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"PULSE_SEED is not an integer: {env!r}") from None
    return None


def _eps_for(args, data: TimeSeries) -> float:
    if args.eps_reg is not None:
        return args.eps_reg
    return args.eps_mult * default_eps_reg(data.values)


def _impulses_json(train):
    return {
        "init_x2": float(train.init_x2),
        "train": [
            {"time": float(t), "weight": float(w)}
            for t, w in zip(train.times, train.weights)
        ],
    }


def _gamma_json(curve):
    return [
        {
            "b1": p.b1,
            "b2_bar": p.b2_bar,
            "b2_hat": p.b2_hat,
            "n_impulses": p.n_impulses,
            "rss": p.rss,
            "target_rss": p.target_rss,
            "bic": p.bic,
        }
        for p in curve.points
    ]


def _basal_json(est):
    return [
        {
            "b1": c.b1,
            "cells": [
                {
                    "y0": cell.y0,
                    "b2_bar": cell.b2_bar,
                    "b2_hat": cell.b2_hat,
                    "n_impulses": cell.n_impulses,
                    "rss": cell.rss,
                    "bic": cell.bic,
                    "degenerate": cell.degenerate,
                }
                for cell in c.cells
            ],
        }
        for c in est.curves
    ]


def _write_plot_data(prefix, *, scan=None, curve=None, basal=None, train=None, weights=None, grid_times=None):
    """Long-format CSVs for external plotting."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    if scan is not None:
        nf = scan.newton_quotient()
        with open(f"{prefix}_nf.csv", "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["omega", "f", "df", "nf"])
            for i in range(scan.omega_grid.shape[0]):
                w.writerow(
                    [
                        repr(float(scan.omega_grid[i])),
                        repr(float(scan.f_values[i])),
                        repr(float(scan.df_values[i])),
                        repr(float(nf[i])),
                    ]
                )
    if curve is not None:
        with open(f"{prefix}_gamma.csv", "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["b1", "b2_bar", "b2_hat", "n_impulses", "rss", "bic"])
            for p in curve.points:
                w.writerow(
                    [
                        repr(p.b1),
                        repr(p.b2_bar),
                        repr(p.b2_hat),
                        str(p.n_impulses),
                        repr(p.rss),
                        repr(p.bic),
                    ]
                )
    if basal is not None:
        with open(f"{prefix}_basal.csv", "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["b1", "y0", "b2_hat", "n_impulses", "rss", "bic"])
            for c in basal.curves:
                for cell in c.cells:
                    w.writerow(
                        [
                            repr(c.b1),
                            repr(cell.y0),
                            repr(cell.b2_hat),
                            str(cell.n_impulses),
                            repr(cell.rss),
                            repr(cell.bic),
                        ]
                    )
    if train is not None:
        with open(f"{prefix}_impulses.csv", "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "weight"])
            for t, d in zip(train.times, train.weights):
                w.writerow([repr(float(t)), repr(float(d))])
    if weights is not None and grid_times is not None:
        with open(f"{prefix}_weights.csv", "w", encoding="utf-8", newline="\n") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "weight"])
            for t, d in zip(grid_times, weights.w):
                w.writerow([repr(float(t)), repr(float(d))])


def _config_echo(args, data, eps, extra=None):
    cfg = {
        "input": str(args.input),
        "order": getattr(args, "order", 2),
        "eps_reg": eps,
        "robust_eps": args.robust_eps,
        "n_max": args.n_max,
        "n_samples": len(data),
    }
    if extra:
        cfg.update(extra)
    return cfg


def _cmd_fit(args) -> int:
    data = read_series_csv(args.input)
    seed = _resolve_seed(args)
    eps = _eps_for(args, data)
    result = {
        "schema": 1,
        "version": __version__,
        "command": "fit",
        "seed": seed,
    }
    if args.order == 1:
        cfg = ScanConfig(
            interval=args.omega_interval,
            grid_points=args.omega_grid,
            eps_reg=eps,
            robust_eps=args.robust_eps,
            n_max=args.n_max,
        )
        est, train = estimate_first_order(data, cfg)
        scan, _ = scan_newton_quotient(data, cfg, order=1)
        result.update(
            config=_config_echo(
                args,
                data,
                eps,
                {
                    "omega_interval": list(args.omega_interval),
                    "omega_grid": args.omega_grid,
                },
            ),
            parameters={"b": est.omega_hat},
            impulses=_impulses_json(train),
            gamma=None,
            robust_weights=None,
            flags={
                "outlying_profile": est.at_lower_boundary,
                "boundary_hit": est.at_lower_boundary,
                "convergence": True,
            },
        )
        if args.plot_data:
            _write_plot_data(args.plot_data, scan=scan, train=train)
    elif args.y0 is not None:
        cfg_b1, cfg_b2, _ = _second_order_configs(args, data, eps)
        curve = gamma_curve(data, cfg_b1, cfg_b2, y0=args.y0)
        pt = curve.bic_point
        boundary = (
            pt.b2_bar == args.b2_interval[0]
            or pt.b1 in (args.b1_interval[0], args.b1_interval[1])
        )
        result.update(
            config=_config_echo(args, data, eps, _second_order_echo(args)),
            parameters={"b1": pt.b1, "b2": pt.b2_hat, "y0": args.y0},
            impulses=_impulses_json(pt.impulses),
            gamma=_gamma_json(curve),
            robust_weights=None if pt.weights is None else list(pt.weights.w),
            flags={
                "outlying_profile": pt.b2_bar == args.b2_interval[0],
                "boundary_hit": boundary,
                "convergence": curve.robust_converged,
            },
        )
        if args.plot_data:
            scan, _ = scan_newton_quotient(data, cfg_b2, order=2, b1=pt.b1, y0=args.y0)
            _write_plot_data(
                args.plot_data,
                scan=scan,
                curve=curve,
                train=pt.impulses,
                weights=pt.weights,
                grid_times=data.grid.times,
            )
    else:
        cfg_b1, cfg_b2, cfg_y0 = _second_order_configs(args, data, eps)
        est = estimate_basal(data, cfg_b1, cfg_b2, cfg_y0)
        boundary = (
            est.b1 in (args.b1_interval[0], args.b1_interval[1])
            or est.y0 in (cfg_y0.interval[0], cfg_y0.interval[1])
        )
        result.update(
            config=_config_echo(args, data, eps, _second_order_echo(args, cfg_y0)),
            parameters={"b1": est.b1, "b2": est.b2, "y0": est.y0},
            impulses=_impulses_json(est.impulses),
            gamma=None,
            basal=_basal_json(est),
            robust_weights=None if est.weights is None else list(est.weights.w),
            flags={
                "outlying_profile": _basal_boundary_flag(est, args),
                "boundary_hit": boundary,
                "convergence": est.robust_converged,
            },
        )
        if args.plot_data:
            scan, _ = scan_newton_quotient(
                data, cfg_b2, order=2, b1=est.b1, y0=est.y0
            )
            _write_plot_data(
                args.plot_data,
                scan=scan,
                basal=est,
                train=est.impulses,
                weights=est.weights,
                grid_times=data.grid.times,
            )
    write_json(args.output, result)
    return 0


def _basal_boundary_flag(est, args) -> bool:
    curve = next(c for c in est.curves if c.b1 == est.b1)
    cell = curve.cells[curve.best_index]
    return cell.b2_bar == args.b2_interval[0]


def _second_order_configs(args, data, eps):
    cfg_b1 = ScanConfig(
        interval=args.b1_interval, grid_points=args.b1_grid, eps_reg=eps
    )
    cfg_b2 = ScanConfig(
        interval=args.b2_interval,
        grid_points=args.b2_grid,
        eps_reg=eps,
        robust_eps=args.robust_eps,
        n_max=args.n_max,
    )
    if args.y0_interval is not None:
        y0_interval = args.y0_interval
    else:
        lo = float(data.values.min())
        hi = float(data.values.max())
        y0_interval = (lo - 0.5 * (hi - lo), lo)
    cfg_y0 = ScanConfig(interval=y0_interval, grid_points=args.y0_grid, eps_reg=eps)
    return cfg_b1, cfg_b2, cfg_y0


def _second_order_echo(args, cfg_y0=None):
    echo = {
        "b1_interval": list(args.b1_interval),
        "b1_grid": args.b1_grid,
        "b2_interval": list(args.b2_interval),
        "b2_grid": args.b2_grid,
        "y0": args.y0,
    }
    if cfg_y0 is not None:
        echo["y0_interval"] = list(cfg_y0.interval)
        echo["y0_grid"] = args.y0_grid
    return echo


def _cmd_gamma(args) -> int:
    data = read_series_csv(args.input)
    eps = _eps_for(args, data)
    cfg_b1, cfg_b2, _ = _second_order_configs(args, data, eps)
    y0 = args.y0 if args.y0 is not None else 0.0
    curve = gamma_curve(data, cfg_b1, cfg_b2, y0=y0)
    pt = curve.bic_point
    result = {
        "schema": 1,
        "version": __version__,
        "command": "gamma",
        "seed": _resolve_seed(args),
        "config": _config_echo(args, data, eps, _second_order_echo(args)),
        "parameters": {"b1": pt.b1, "b2": pt.b2_hat, "y0": y0},
        "impulses": _impulses_json(pt.impulses),
        "gamma": _gamma_json(curve),
        "pareto": {
            str(n): {"b1": p.b1, "b2": p.b2_hat, "rss": p.rss}
            for n, p in sorted(curve.pareto.items())
        },
        "robust_weights": None if pt.weights is None else list(pt.weights.w),
        "flags": {
            "outlying_profile": pt.b2_bar == args.b2_interval[0],
            "boundary_hit": pt.b2_bar == args.b2_interval[0],
            "convergence": curve.robust_converged,
        },
    }
    write_json(args.output, result)
    if args.plot_data:
        _write_plot_data(
            args.plot_data,
            curve=curve,
            train=pt.impulses,
            weights=pt.weights,
            grid_times=data.grid.times,
        )
    return 0


def _cmd_basal(args) -> int:
    data = read_series_csv(args.input)
    eps = _eps_for(args, data)
    cfg_b1, cfg_b2, cfg_y0 = _second_order_configs(args, data, eps)
    est = estimate_basal(data, cfg_b1, cfg_b2, cfg_y0)
    result = {
        "schema": 1,
        "version": __version__,
        "command": "basal",
        "seed": _resolve_seed(args),
        "config": _config_echo(args, data, eps, _second_order_echo(args, cfg_y0)),
        "parameters": {"b1": est.b1, "b2": est.b2, "y0": est.y0},
        "impulses": _impulses_json(est.impulses),
        "basal": _basal_json(est),
        "robust_weights": None if est.weights is None else list(est.weights.w),
        "flags": {
            "outlying_profile": _basal_boundary_flag(est, args),
            "boundary_hit": _basal_boundary_flag(est, args),
            "convergence": est.robust_converged,
        },
    }
    write_json(args.output, result)
    if args.plot_data:
        _write_plot_data(
            args.plot_data,
            basal=est,
            train=est.impulses,
            weights=est.weights,
            grid_times=data.grid.times,
        )
    return 0


def _cmd_synth(args) -> int:
    seed = _resolve_seed(args)
    if seed is None:
        raise ValueError("synth needs --seed (or PULSE_SEED)")
    spec = make_spec(args.experiment, seed, sigma=args.sigma)
    inst = generate(spec)
    write_series_csv(args.output, inst.data.grid.times, inst.data.values)
    truth = {
        "schema": 1,
        "version": __version__,
        "command": "synth",
        "seed": seed,
        "config": {
            "experiment": spec.experiment,
            "sigma": spec.sigma,
            "sigma_outlier": spec.sigma_outlier,
            "n_outliers": spec.n_outliers,
            "period": spec.period,
            "weight_range": list(spec.weight_range),
            "rate_range": list(spec.rate_range),
            "rate_gap_range": None
            if spec.rate_gap_range is None
            else list(spec.rate_gap_range),
            "gap_range": list(spec.gap_range),
        },
        "model": _model_json(inst.model),
        "impulses": _impulses_json(inst.train),
        "outlier_indices": [int(i) for i in inst.outlier_indices],
    }
    write_json(args.truth, truth)
    return 0


def _model_json(model):
    if hasattr(model, "b1"):
        return {"order": 2, "b1": model.b1, "b2": model.b2, "y0": model.y0}
    return {"order": 1, "b": model.b}


def _cmd_experiment(args) -> int:
    seed = _resolve_seed(args)
    if seed is None:
        raise ValueError("experiment needs --seed (or PULSE_SEED)")
    trials = args.trials
    if trials is None:
        trials = (FULL_TRIALS if args.full_scale else DESK_TRIALS)[args.name]
    runner = RUNNERS[args.name]
    if args.name == "point_estimates":
        sigmas = [float(s) for s in args.sigmas.split(",")]
        report = runner(sigmas, trials, seed)
    else:
        report = runner(trials, seed)
    paths = write_report(report, args.output)
    print(
        f"{args.name}: {trials} trials in {report.runtime_seconds:.1f}s -> "
        + ", ".join(str(p) for p in paths.values()),
        file=sys.stderr,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pulsefit",
        description="Impulsive time-series estimation and benchmarks",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_fit(p, with_order=False):
        p.add_argument("input", help="CSV with header 'time,value'")
        p.add_argument("-o", "--output", required=True, help="result JSON path")
        if with_order:
            p.add_argument("--order", type=int, choices=(1, 2), default=2)
            p.add_argument(
                "--omega-interval",
                nargs=2,
                type=float,
                default=DEFAULT_OMEGA_INTERVAL,
                metavar=("LO", "HI"),
                help="rate interval for first-order fits",
            )
            p.add_argument("--omega-grid", type=int, default=200)
        p.add_argument(
            "--y0",
            type=float,
            default=None,
            help="fixed basal level; omit to estimate it (second order)",
        )
        p.add_argument(
            "--b1-interval", nargs=2, type=float, default=DEFAULT_B1_INTERVAL,
            metavar=("LO", "HI"),
        )
        p.add_argument(
            "--b2-interval", nargs=2, type=float, default=DEFAULT_B2_INTERVAL,
            metavar=("LO", "HI"),
        )
        p.add_argument(
            "--y0-interval", nargs=2, type=float, default=None, metavar=("LO", "HI"),
            help="basal-level interval (default: from the data range)",
        )
        p.add_argument("--b1-grid", type=int, default=60)
        p.add_argument("--b2-grid", type=int, default=200)
        p.add_argument("--y0-grid", type=int, default=60)
        p.add_argument("--eps-reg", type=float, default=None,
                       help="explicit residual regularization constant")
        p.add_argument("--eps-mult", type=float, default=1.0,
                       help="multiplier on the estimated noise variance")
        p.add_argument("--robust-eps", type=float, default=0.0,
                       help="assumed fraction of corrupted samples (0 = off)")
        p.add_argument("--n-max", type=int, default=None,
                       help="cap on estimated impulses (default ceil(K/4))")
        p.add_argument("--plot-data", default=None, metavar="PREFIX",
                       help="write long-format plot CSVs with this prefix")
        p.add_argument("--seed", type=int, default=None)

    p_fit = sub.add_parser("fit", help="fit a recorded series")
    add_common_fit(p_fit, with_order=True)
    p_fit.set_defaults(func=_cmd_fit)

    p_gamma = sub.add_parser("gamma", help="gamma curve at fixed basal level")
    add_common_fit(p_gamma)
    p_gamma.set_defaults(func=_cmd_gamma, order=2)

    p_basal = sub.add_parser("basal", help="basal-level estimation curves")
    add_common_fit(p_basal)
    p_basal.set_defaults(func=_cmd_basal, order=2)

    p_synth = sub.add_parser("synth", help="generate a synthetic instance")
    p_synth.add_argument("--experiment", choices=SYNTH_EXPERIMENTS, required=True)
    p_synth.add_argument("--sigma", type=float, default=None)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.add_argument("-o", "--output", required=True, help="data CSV path")
    p_synth.add_argument("--truth", required=True, help="truth JSON path")
    p_synth.set_defaults(func=_cmd_synth)

    p_exp = sub.add_parser("experiment", help="run a Monte-Carlo benchmark")
    p_exp.add_argument("name", choices=sorted(RUNNERS))
    p_exp.add_argument("--trials", type=int, default=None)
    p_exp.add_argument("--full-scale", action="store_true",
                       help="use publication-scale trial counts")
    p_exp.add_argument("--sigmas", default="0.002,0.012",
                       help="comma-separated noise levels (point_estimates)")
    p_exp.add_argument("--seed", type=int, default=None)
    p_exp.add_argument("-o", "--output", required=True, help="report directory")
    p_exp.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if hasattr(args, "b1_interval"):
        args.b1_interval = _interval(args.b1_interval)
        args.b2_interval = _interval(args.b2_interval)
        if args.y0_interval is not None:
            args.y0_interval = _interval(args.y0_interval)
    if hasattr(args, "omega_interval"):
        args.omega_interval = _interval(args.omega_interval)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DegenerateScanError as exc:
        print(f"degenerate scan: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
