"""Monte-Carlo benchmark harness.

Each runner draws independent synthetic instances, estimates them, and
reports per-trial records together with aggregate rows. Reports are pure
functions of (experiment, seed, trial count, config): trial seeds are
derived from the root seed by index, trials are merged in index order, and
wall-clock runtime is kept off the serialized output so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .model import TimeSeries
from .onestep import (
    DegenerateScanError,
    ScanConfig,
    estimate_basal,
    estimate_first_order,
    fit_known_times,
    gamma_curve,
)
from .synth import BASAL, FIRST_ORDER, ROBUST, SECOND_ORDER_POINT, generate, make_spec, trial_seed


@dataclass
class ExperimentReport:
    """Per-trial records plus aggregates for one experiment run.

    Aggregates are recomputable from the records; runtime_seconds is
    informational only and is never serialized.
    """

    experiment: str
    trials: int
    seed: int
    config: dict
    records: list
    aggregates: dict
    runtime_seconds: float = 0.0

    def to_jsonable(self) -> dict:
        return to_jsonable(
            {
                "schema": 1,
                "version": __version__,
                "experiment": self.experiment,
                "trials": self.trials,
                "seed": self.seed,
                "config": self.config,
                "aggregates": self.aggregates,
                "records": self.records,
            }
        )


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays for the json module."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        # JSON has no inf/nan literals; serialize as strings
        return repr(obj)
    return obj


def _eps_from_sigma(sigma: float, mult: float) -> float:
    # keep the residual strictly positive even in noise-free runs
    return max(mult * sigma * sigma, 1e-12)


def _mapped_impulse_columns(data: TimeSeries, taus) -> np.ndarray:
    """First sampling time at or after each impulse (impulses before the
    window map to the first sample, which carries the initial state)."""
    t = data.grid.times
    cols = np.searchsorted(t, np.asarray(taus, dtype=np.float64), side="left")
    cols = np.clip(cols, 0, t.shape[0] - 1)
    return t[np.unique(cols)]


def run_first_order(
    trials: int,
    seed: int,
    *,
    sigma: float = 0.01,
    interval=(0.05, 2.5),
    grid_points: int = 200,
    eps_mult: float = 4.0,
) -> ExperimentReport:
    """Elimination-rate recovery on first-order instances.

    Reports the one-step errors next to the errors of the direct fit with
    known impulse times, their correlation, and histogram records for the
    preliminary and refined estimates.
    """
    t0 = time.perf_counter()
    config = {
        "sigma": sigma,
        "interval": list(interval),
        "grid_points": grid_points,
        "eps_mult": eps_mult,
    }
    cfg = ScanConfig(
        interval=tuple(interval),
        grid_points=grid_points,
        eps_reg=_eps_from_sigma(sigma, eps_mult),
    )
    records = []
    for i in range(trials):
        inst = generate(make_spec(FIRST_ORDER, trial_seed(seed, i), sigma=sigma))
        rec = {"trial": i, "b": inst.model.b}
        try:
            est, _train = estimate_first_order(inst.data, cfg)
            known = fit_known_times(
                inst.data, _mapped_impulse_columns(inst.data, inst.train.times), cfg
            )
        except DegenerateScanError as exc:
            rec["failed"] = str(exc)
            records.append(rec)
            continue
        rec.update(
            omega_bar=est.omega_bar,
            omega_hat=est.omega_hat,
            omega_known=known.omega,
            err_bar=inst.model.b - est.omega_bar,
            err_onestep=inst.model.b - est.omega_hat,
            err_known=inst.model.b - known.omega,
        )
        records.append(rec)

    ok = [r for r in records if "failed" not in r]
    e1 = np.array([r["err_onestep"] for r in ok])
    e2 = np.array([r["err_known"] for r in ok])
    aggregates = {
        "rmse_onestep": float(np.sqrt(np.mean(e1**2))),
        "rmse_known_times": float(np.sqrt(np.mean(e2**2))),
        "error_correlation": float(np.corrcoef(e1, e2)[0, 1]),
        "mean_err_bar": float(np.mean([r["err_bar"] for r in ok])),
        "n_failed": len(records) - len(ok),
    }
    report = ExperimentReport(
        experiment="first_order",
        trials=trials,
        seed=seed,
        config=config,
        records=records,
        aggregates=aggregates,
    )
    report.runtime_seconds = time.perf_counter() - t0
    return report


def _curve_metrics(curve, b1_true: float, b2_true: float) -> dict:
    """Distance metrics of one gamma curve against the generating truth."""

    def dist(pt):
        return math.hypot(pt.b1 - b1_true, pt.b2_hat - b2_true)

    d_gamma = min(dist(p) for p in curve.points)
    d_pareto = min(dist(p) for p in curve.pareto.values())
    joint = None
    for p in curve.points:
        if joint is None or p.newton_step < joint.newton_step:
            joint = p
    return {
        "d_bic": dist(curve.bic_point),
        "d_pareto_best": d_pareto,
        "d_joint_nf": dist(joint),
        "d_gamma": d_gamma,
        "n0_bic": curve.bic_point.n_impulses,
    }


def run_point_estimates(
    sigmas,
    trials: int,
    seed: int,
    *,
    b1_interval=(0.5, 3.0),
    b1_points: int = 150,
    b2_interval=(0.1, 2.0),
    b2_points: int = 200,
    eps_mult: float = 1.0,
) -> ExperimentReport:
    """Second-order point estimates under increasing noise.

    Per noise level: mean distances to the truth for the BIC point, the
    best Pareto point, the joint quotient minimizer, and the curve itself,
    plus the mean selected impulse count.
    """
    t0 = time.perf_counter()
    sigmas = [float(s) for s in sigmas]
    config = {
        "sigmas": sigmas,
        "b1_interval": list(b1_interval),
        "b1_points": b1_points,
        "b2_interval": list(b2_interval),
        "b2_points": b2_points,
        "eps_mult": eps_mult,
    }
    cfg_b1 = ScanConfig(interval=tuple(b1_interval), grid_points=b1_points, eps_reg=0.0)
    records = []
    for si, sigma in enumerate(sigmas):
        cfg_b2 = ScanConfig(
            interval=tuple(b2_interval),
            grid_points=b2_points,
            eps_reg=_eps_from_sigma(sigma, eps_mult),
        )
        for i in range(trials):
            inst = generate(
                make_spec(SECOND_ORDER_POINT, trial_seed(seed, si, i), sigma=sigma)
            )
            rec = {
                "sigma": sigma,
                "trial": i,
                "b1": inst.model.b1,
                "b2": inst.model.b2,
            }
            try:
                curve = gamma_curve(inst.data, cfg_b1, cfg_b2)
            except DegenerateScanError as exc:
                rec["failed"] = str(exc)
                records.append(rec)
                continue
            rec.update(_curve_metrics(curve, inst.model.b1, inst.model.b2))
            records.append(rec)

    aggregates = {}
    for sigma in sigmas:
        ok = [r for r in records if r["sigma"] == sigma and "failed" not in r]
        aggregates[f"sigma={sigma!r}"] = {
            "mean_d_bic": float(np.mean([r["d_bic"] for r in ok])),
            "mean_d_pareto_best": float(np.mean([r["d_pareto_best"] for r in ok])),
            "mean_d_joint_nf": float(np.mean([r["d_joint_nf"] for r in ok])),
            "mean_d_gamma": float(np.mean([r["d_gamma"] for r in ok])),
            "mean_n0": float(np.mean([r["n0_bic"] for r in ok])),
            "n_failed": sum(
                1 for r in records if r["sigma"] == sigma and "failed" in r
            ),
        }
    report = ExperimentReport(
        experiment="point_estimates",
        trials=trials,
        seed=seed,
        config=config,
        records=records,
        aggregates=aggregates,
    )
    report.runtime_seconds = time.perf_counter() - t0
    return report


def run_basal(
    trials: int,
    seed: int,
    *,
    sigma: float = 0.008,
    b1_interval=(4.0, 6.5),
    b1_points: int = 8,
    b2_interval=(0.1, 1.5),
    b2_points: int = 200,
    y0_interval=(-0.25, 0.25),
    y0_points: int = 60,
    eps_mult: float = 1.0,
) -> ExperimentReport:
    """Basal-level estimation with a fast-slow rate separation.

    Compares the one-step basal estimate against the minimum-sample
    baseline; reports bias and variance for both rates and both basal
    estimators (the true basal level is zero by construction).
    """
    t0 = time.perf_counter()
    config = {
        "sigma": sigma,
        "b1_interval": list(b1_interval),
        "b1_points": b1_points,
        "b2_interval": list(b2_interval),
        "b2_points": b2_points,
        "y0_interval": list(y0_interval),
        "y0_points": y0_points,
        "eps_mult": eps_mult,
    }
    eps = _eps_from_sigma(sigma, eps_mult)
    cfg_b1 = ScanConfig(interval=tuple(b1_interval), grid_points=b1_points, eps_reg=eps)
    cfg_b2 = ScanConfig(interval=tuple(b2_interval), grid_points=b2_points, eps_reg=eps)
    cfg_y0 = ScanConfig(interval=tuple(y0_interval), grid_points=y0_points, eps_reg=eps)
    records = []
    for i in range(trials):
        inst = generate(make_spec(BASAL, trial_seed(seed, i), sigma=sigma))
        rec = {
            "trial": i,
            "b1": inst.model.b1,
            "b2": inst.model.b2,
            "min_y": float(inst.data.values.min()),
        }
        try:
            est = estimate_basal(inst.data, cfg_b1, cfg_b2, cfg_y0)
        except DegenerateScanError as exc:
            rec["failed"] = str(exc)
            records.append(rec)
            continue
        rec.update(b1_hat=est.b1, b2_hat=est.b2, y0_hat=est.y0, n0=len(est.impulses))
        records.append(rec)

    ok = [r for r in records if "failed" not in r]

    def stats(key, truth_key=None):
        vals = np.array([r[key] for r in ok])
        truth = np.array([r[truth_key] for r in ok]) if truth_key else 0.0
        err = vals - truth
        return float(np.mean(err)), float(np.var(err, ddof=1))

    bias_b1, var_b1 = stats("b1_hat", "b1")
    bias_b2, var_b2 = stats("b2_hat", "b2")
    bias_y0, var_y0 = stats("y0_hat")
    bias_min, var_min = stats("min_y")
    aggregates = {
        "bias_b1": bias_b1,
        "var_b1": var_b1,
        "bias_b2": bias_b2,
        "var_b2": var_b2,
        "bias_y0_onestep": bias_y0,
        "var_y0_onestep": var_y0,
        "bias_y0_min_sample": bias_min,
        "var_y0_min_sample": var_min,
        "n_failed": len(records) - len(ok),
    }
    report = ExperimentReport(
        experiment="basal",
        trials=trials,
        seed=seed,
        config=config,
        records=records,
        aggregates=aggregates,
    )
    report.runtime_seconds = time.perf_counter() - t0
    return report


def run_robust(
    trials: int,
    seed: int,
    *,
    eps: float = 0.1,
    sigma: float = 0.006,
    b1_interval=(0.5, 3.0),
    b1_points: int = 60,
    b2_interval=(0.1, 2.0),
    b2_points: int = 200,
    eps_mult: float = 1.0,
) -> ExperimentReport:
    """Outlier robustness: three arms on paired data.

    Per trial the same truth is observed under pure Gaussian noise and
    under mixed noise (two samples get wide uniform noise); the standard
    estimator runs on both and the trimmed estimator on the mixed series.
    """
    t0 = time.perf_counter()
    config = {
        "eps": eps,
        "sigma": sigma,
        "b1_interval": list(b1_interval),
        "b1_points": b1_points,
        "b2_interval": list(b2_interval),
        "b2_points": b2_points,
        "eps_mult": eps_mult,
    }
    eps_reg = _eps_from_sigma(sigma, eps_mult)
    cfg_b1 = ScanConfig(interval=tuple(b1_interval), grid_points=b1_points, eps_reg=eps_reg)
    cfg_std = ScanConfig(interval=tuple(b2_interval), grid_points=b2_points, eps_reg=eps_reg)
    cfg_rob = ScanConfig(
        interval=tuple(b2_interval),
        grid_points=b2_points,
        eps_reg=eps_reg,
        robust_eps=eps,
    )
    records = []
    for i in range(trials):
        inst = generate(make_spec(ROBUST, trial_seed(seed, i), sigma=sigma))
        data_gauss = TimeSeries(inst.data.grid, inst.gaussian_values)
        rec = {
            "trial": i,
            "b1": inst.model.b1,
            "b2": inst.model.b2,
            "outliers": [int(v) for v in inst.outlier_indices],
        }
        try:
            for arm, data, cfg in (
                ("gauss_std", data_gauss, cfg_std),
                ("mixed_std", inst.data, cfg_std),
                ("mixed_rob", inst.data, cfg_rob),
            ):
                curve = gamma_curve(data, cfg_b1, cfg)
                m = _curve_metrics(curve, inst.model.b1, inst.model.b2)
                rec[f"d_gamma_{arm}"] = m["d_gamma"]
                rec[f"d_bic_{arm}"] = m["d_bic"]
        except DegenerateScanError as exc:
            rec["failed"] = str(exc)
            records.append(rec)
            continue
        records.append(rec)

    ok = [r for r in records if "failed" not in r]
    aggregates = {"n_failed": len(records) - len(ok)}
    for arm in ("gauss_std", "mixed_std", "mixed_rob"):
        aggregates[f"mean_d_gamma_{arm}"] = float(
            np.mean([r[f"d_gamma_{arm}"] for r in ok])
        )
        aggregates[f"mean_d_bic_{arm}"] = float(
            np.mean([r[f"d_bic_{arm}"] for r in ok])
        )
    report = ExperimentReport(
        experiment="robust",
        trials=trials,
        seed=seed,
        config=config,
        records=records,
        aggregates=aggregates,
    )
    report.runtime_seconds = time.perf_counter() - t0
    return report


RUNNERS = {
    "first_order": run_first_order,
    "point_estimates": run_point_estimates,
    "basal": run_basal,
    "robust": run_robust,
}


def write_report(report: ExperimentReport, outdir) -> dict:
    """Write the report as JSON plus per-trial and summary CSVs.

    Output bytes depend only on the report contents (sorted keys, repr
    floats, '\\n' line endings), so reruns with the same seed match
    byte for byte.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}

    jpath = outdir / f"{report.experiment}_report.json"
    with open(jpath, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report.to_jsonable(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    paths["report"] = jpath

    tpath = outdir / f"{report.experiment}_trials.csv"
    keys = sorted({k for r in report.records for k in r})
    with open(tpath, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(keys)
        for r in report.records:
            writer.writerow([_csv_cell(r.get(k)) for k in keys])
    paths["trials"] = tpath

    spath = outdir / f"{report.experiment}_summary.csv"
    with open(spath, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group", "metric", "value"])
        for key in sorted(report.aggregates):
            val = report.aggregates[key]
            if isinstance(val, dict):
                for sub in sorted(val):
                    writer.writerow([key, sub, _csv_cell(val[sub])])
            else:
                writer.writerow(["", key, _csv_cell(val)])
    paths["summary"] = spath
    return paths


def _csv_cell(value):
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return ";".join(str(v) for v in value)
    return str(value)
