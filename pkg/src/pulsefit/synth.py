"""Synthetic data generation for the benchmark experiments.

Every instance is the uniformly sampled (period 0.5) response to four
impulses with uniform gaps in [2, 5]. The train is shifted so that time
zero falls at the midpoint of the first gap: the first impulse lands at
negative time (creating a nonzero initial condition) and the remaining
three fall inside the observation window, which ends a final uniform gap
after the last impulse.

Reproducibility: instances are pure functions of their spec. The root RNG
is seeded with SeedSequence(spec.seed); harnesses derive per-trial seeds as
SeedSequence(root_seed, spawn_key=(trial,)), so parallel trial generation
yields the same streams as sequential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    FirstOrderModel,
    ImpulseTrain,
    SamplingGrid,
    SecondOrderModel,
    TimeSeries,
    simulate,
)

FIRST_ORDER = "first_order"
SECOND_ORDER_POINT = "second_order_point"
BASAL = "basal"
ROBUST = "robust"

EXPERIMENTS = (FIRST_ORDER, SECOND_ORDER_POINT, BASAL, ROBUST)

# uniform noise on an interval of width 1 has standard deviation 1/sqrt(12)
OUTLIER_NOISE_STD = 0.289


@dataclass(frozen=True)
class SynthSpec:
    """Generation parameters for one synthetic instance.

    weight_range bounds the impulse weights, rate_range the elimination
    rate (b for first order, the slow rate b2 otherwise), rate_gap_range
    the fast-slow rate difference b1 - b2 (None for first order). For the
    robust experiment, n_outliers samples get uniform noise on
    [-0.5, 0.5] (std sigma_outlier) instead of Gaussian noise.
    """

    experiment: str
    seed: int
    sigma: float
    weight_range: tuple
    rate_range: tuple
    rate_gap_range: tuple | None = None
    sigma_outlier: float = 0.0
    n_outliers: int = 0
    period: float = 0.5
    n_impulses: int = 4
    gap_range: tuple = (2.0, 5.0)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.sigma >= 0.0:
            raise ValueError("sigma must be nonnegative")
        for name, rng in (
            ("weight_range", self.weight_range),
            ("rate_range", self.rate_range),
            ("gap_range", self.gap_range),
        ):
            lo, hi = rng
            if not (0.0 <= lo <= hi):
                raise ValueError(f"invalid {name} {rng}")
        if self.n_outliers and not self.sigma_outlier > 0.0:
            raise ValueError("outliers need a positive sigma_outlier")


def make_spec(experiment: str, seed: int, sigma: float | None = None) -> SynthSpec:
    """Spec with the standard parameter distributions of each experiment.

    sigma must be given for the second-order point experiment (it is the
    swept parameter there) and may override the default elsewhere.
    """
    if experiment == FIRST_ORDER:
        return SynthSpec(
            experiment=experiment,
            seed=seed,
            sigma=0.01 if sigma is None else sigma,
            weight_range=(0.1, 1.0),
            rate_range=(0.4, 1.4),
        )
    if experiment == SECOND_ORDER_POINT:
        if sigma is None:
            raise ValueError("the point-estimate experiment needs an explicit sigma")
        return SynthSpec(
            experiment=experiment,
            seed=seed,
            sigma=sigma,
            weight_range=(0.4, 4.0),
            rate_range=(0.4, 1.4),
            rate_gap_range=(0.3, 1.3),
        )
    if experiment == BASAL:
        return SynthSpec(
            experiment=experiment,
            seed=seed,
            sigma=0.008 if sigma is None else sigma,
            weight_range=(2.0, 7.0),
            rate_range=(0.4, 1.0),
            rate_gap_range=(4.0, 5.0),
        )
    if experiment == ROBUST:
        return SynthSpec(
            experiment=experiment,
            seed=seed,
            sigma=0.006 if sigma is None else sigma,
            weight_range=(0.4, 4.0),
            rate_range=(0.4, 1.4),
            rate_gap_range=(0.3, 1.3),
            sigma_outlier=OUTLIER_NOISE_STD,
            n_outliers=2,
        )
    raise ValueError(f"unknown experiment {experiment!r}")


@dataclass(frozen=True)
class SynthInstance:
    """Generated series plus the generating truth.

    outlier_indices is empty except for the robust experiment, where
    gaussian_values holds the series before outlier-noise substitution (the
    paired clean-noise arm of the robustness comparison).
    """

    data: TimeSeries
    model: FirstOrderModel | SecondOrderModel
    train: ImpulseTrain
    outlier_indices: np.ndarray
    gaussian_values: np.ndarray | None = None


def _layout(gaps, period):
    """Impulse times and sample count from the four gap draws.

    Time zero is the midpoint of the first gap; the horizon runs to the
    last multiple of the period within the final gap (inclusive).
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    starts = np.concatenate(([0.0], np.cumsum(gaps[:-1])))
    shift = gaps[0] / 2.0
    taus = starts - shift
    horizon = starts[-1] + gaps[-1] - shift
    n_samples = int(math.floor(horizon / period + 1e-9)) + 1
    return taus, n_samples


def generate(spec: SynthSpec) -> SynthInstance:
    """Draw one instance. Draw order (fixed for reproducibility): gaps,
    impulse weights, rates, Gaussian noise, then outlier indices and
    replacement noise."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    gaps = rng.uniform(*spec.gap_range, spec.n_impulses)
    weights = rng.uniform(*spec.weight_range, spec.n_impulses)
    if spec.experiment == FIRST_ORDER:
        b = rng.uniform(*spec.rate_range)
        model = FirstOrderModel(b=float(b))
    else:
        b2 = rng.uniform(*spec.rate_range)
        b1 = b2 + rng.uniform(*spec.rate_gap_range)
        model = SecondOrderModel(b1=float(b1), b2=float(b2), y0=0.0)

    taus, n_samples = _layout(gaps, spec.period)
    train = ImpulseTrain(taus, weights)
    grid = SamplingGrid.uniform(n_samples, spec.period)
    clean = simulate(model, train, grid).values
    noise = rng.normal(0.0, spec.sigma, n_samples)
    values = clean + noise

    outlier_indices = np.empty(0, dtype=np.int64)
    gaussian_values = None
    if spec.n_outliers:
        gaussian_values = values.copy()
        picked = rng.choice(n_samples, size=spec.n_outliers, replace=False)
        u = rng.uniform(-0.5, 0.5, spec.n_outliers)
        values = values.copy()
        values[picked] = clean[picked] + u
        outlier_indices = np.sort(picked.astype(np.int64))

    return SynthInstance(
        data=TimeSeries(grid, values),
        model=model,
        train=train,
        outlier_indices=outlier_indices,
        gaussian_values=gaussian_values,
    )


def trial_seed(root_seed: int, *key: int) -> int:
    """Derived per-trial seed: SeedSequence(root_seed, spawn_key=key).

    Harnesses index trials (and sweep positions) through key, so trials can
    be generated in any order, or in parallel, with identical streams."""
    ss = np.random.SeedSequence(entropy=root_seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])
