"""System models, regressor construction, forward simulation, impulse merging.

Two linear plants are supported: a first-order decay driven directly by the
impulse train, and a two-compartment cascade (fast input compartment feeding
a slow output compartment) with an optional constant basal level. Sampled
outputs are exact closed-form superpositions of impulse responses; no ODE
integration is involved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels


@dataclass(frozen=True)
class SamplingGrid:
    """Strictly increasing sampling times t_1..t_K."""

    times: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.shape[0] < 2:
            raise ValueError("sampling grid needs at least two times")
        if not np.all(np.isfinite(t)):
            raise ValueError("sampling times must be finite")
        if not np.all(np.diff(t) > 0.0):
            raise ValueError("sampling times must be strictly increasing")

    def __len__(self) -> int:
        return self.times.shape[0]

    @classmethod
    def uniform(cls, n: int, period: float, start: float = 0.0) -> "SamplingGrid":
        return cls(start + period * np.arange(n))


@dataclass(frozen=True)
class TimeSeries:
    """Sampled output measurements on a grid."""

    grid: SamplingGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.shape[0] != len(self.grid):
            raise ValueError("values must match the sampling grid length")
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")

    def __len__(self) -> int:
        return len(self.grid)


@dataclass(frozen=True)
class FirstOrderModel:
    """dx/dt = -b x + impulses, y = x."""

    b: float

    def __post_init__(self):
        if not (self.b > 0.0 and np.isfinite(self.b)):
            raise ValueError("elimination rate b must be positive")


@dataclass(frozen=True)
class SecondOrderModel:
    """Fast compartment (rate b1) feeding a slow compartment (rate b2) with
    unit coupling; output is the slow state plus the basal level y0.

    y0 may be negative in estimation output even though physical basal
    levels are nonnegative.
    """

    b1: float
    b2: float
    y0: float = 0.0

    def __post_init__(self):
        if not (self.b1 > 0.0 and np.isfinite(self.b1)):
            raise ValueError("b1 must be positive")
        if not (self.b2 > 0.0 and np.isfinite(self.b2)):
            raise ValueError("b2 must be positive")
        if not np.isfinite(self.y0):
            raise ValueError("y0 must be finite")


@dataclass(frozen=True)
class ImpulseTrain:
    """Ordered impulses (time, weight > 0) plus an optional initial level
    init_x2 >= 0 of the slow compartment at the first sample time."""

    times: np.ndarray
    weights: np.ndarray
    init_x2: float = 0.0

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        d = np.ascontiguousarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "weights", d)
        if t.ndim != 1 or d.ndim != 1 or t.shape != d.shape:
            raise ValueError("times and weights must be vectors of equal length")
        if t.shape[0] > 1 and not np.all(np.diff(t) > 0.0):
            raise ValueError("impulse times must be strictly increasing")
        if np.any(d <= 0.0) or not np.all(np.isfinite(d)) or not np.all(np.isfinite(t)):
            raise ValueError("impulse weights must be positive and finite")
        if not (self.init_x2 >= 0.0 and np.isfinite(self.init_x2)):
            raise ValueError("init_x2 must be nonnegative")

    def __len__(self) -> int:
        return self.times.shape[0]

    @classmethod
    def empty(cls, init_x2: float = 0.0) -> "ImpulseTrain":
        return cls(np.empty(0), np.empty(0), init_x2)


def second_order_kernel(b1, b2, t):
    """Slow-compartment response at lag t to a unit impulse into the fast
    compartment: (exp(-b2 t) - exp(-b1 t)) / (b1 - b2) for t >= 0, else 0.

    Near b1 == b2 (relative gap below 1e-8) the analytic limit
    t * exp(-b2 t) is used. Accepts scalar or array lags.
    """
    if not (b1 > 0.0 and b2 > 0.0):
        raise ValueError("rates must be positive")
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    pos = t > 0.0
    if abs(b1 - b2) < 1e-8 * max(b1, b2):
        out[pos] = t[pos] * np.exp(-b2 * t[pos])
    else:
        out[pos] = (np.exp(-b2 * t[pos]) - np.exp(-b1 * t[pos])) / (b1 - b2)
    return out if out.ndim else float(out)


def regressor_first_order(omega, grid: SamplingGrid) -> np.ndarray:
    """K x K lower-triangular matrix, entry (i, j) = exp(-omega (t_i - t_j))
    for i >= j; impulse slots sit on every sampling time."""
    if not omega > 0.0:
        raise ValueError("omega must be positive")
    return _kernels.phi_first_order(omega, grid.times)


def regressor_second_order(b1, b2, grid: SamplingGrid) -> np.ndarray:
    """K x K matrix: column 0 is the decaying initial slow state
    exp(-b2 (t_i - t_1)); columns 1..K-1 are impulse slots at t_1..t_{K-1}
    filled with the second-order kernel."""
    if not (b1 > 0.0 and b2 > 0.0):
        raise ValueError("rates must be positive")
    return _kernels.phi_second_order(b1, b2, grid.times)


def simulate(model, train: ImpulseTrain, grid: SamplingGrid) -> TimeSeries:
    """Exact sampled output of the model driven by the impulse train.

    Impulse times may be arbitrary reals, including before the first sample
    (which creates a nonzero initial condition).
    """
    t = grid.times
    y = np.zeros(len(grid))
    if isinstance(model, FirstOrderModel):
        for tau, d in zip(train.times, train.weights):
            lag = t - tau
            m = lag >= 0.0
            y[m] += d * np.exp(-model.b * lag[m])
    elif isinstance(model, SecondOrderModel):
        y += model.y0
        y += train.init_x2 * np.exp(-model.b2 * (t - t[0]))
        for tau, d in zip(train.times, train.weights):
            y += d * second_order_kernel(model.b1, model.b2, t - tau)
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    return TimeSeries(grid, y)


def merge_pair(b1, b2, t_k, t_k1, d_k, d_k1):
    """Replace two impulses (d_k at t_k, d_k1 at t_k1) by the single impulse
    (tau in [t_k, t_k1], m > 0) that leaves both compartment states at t_k1
    unchanged, hence the output unchanged for all later times.

    Solved by bisection (tolerance 1e-12 on tau): the state ratio is a
    monotone function of the merged impulse lag.
    """
    if not t_k < t_k1:
        raise ValueError("pair times must satisfy t_k < t_k1")
    if d_k < 0.0 or d_k1 < 0.0 or d_k + d_k1 <= 0.0:
        raise ValueError("pair weights must be nonnegative with positive sum")
    taus, ms = merge_adjacent(
        b1, b2, np.array([t_k, t_k1]), np.array([d_k, d_k1])
    )
    return float(taus[0]), float(ms[0])


def merge_adjacent(b1, b2, times, weights):
    """Merged (tau, m) for every consecutive pair of impulses.

    Vectorized bisection over all K-1 pairs; pairs whose total weight is
    zero get m = 0 with tau at the left time (dropped downstream).
    """
    times = np.asarray(times, dtype=np.float64)
    d = np.asarray(weights, dtype=np.float64)
    n = times.shape[0] - 1
    if n < 1:
        return np.empty(0), np.empty(0)
    t_l, t_r = times[:-1], times[1:]
    d_l, d_r = d[:-1], d[1:]
    delta = t_r - t_l

    # state contents at the right time produced by the pair
    s_fast = d_l * np.exp(-b1 * delta) + d_r
    s_slow = d_l * second_order_kernel(b1, b2, delta)

    taus = t_l.copy()
    ms = np.zeros(n)

    both_zero = (d_l == 0.0) & (d_r == 0.0)
    only_left = (d_r == 0.0) & ~both_zero
    only_right = (d_l == 0.0) & ~both_zero
    taus[only_left] = t_l[only_left]
    ms[only_left] = d_l[only_left]
    taus[only_right] = t_r[only_right]
    ms[only_right] = d_r[only_right]

    active = ~(both_zero | only_left | only_right)
    if np.any(active):
        # find lag s in [0, delta] with kernel(s) e^{b1 s} = s_slow / s_fast;
        # the left side grows strictly from 0, so bisection cannot fail
        rho = s_slow[active] / s_fast[active]
        lo = np.zeros(active.sum())
        hi = delta[active].copy()
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            g = second_order_kernel(b1, b2, mid) * np.exp(b1 * mid)
            below = g < rho
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        s = 0.5 * (lo + hi)
        taus[active] = t_r[active] - s
        ms[active] = s_fast[active] * np.exp(b1 * s)
    return taus, ms


@dataclass(frozen=True)
class MergeSelection:
    """Covering of an impulse chain: keep[k] marks impulse k kept alone,
    merge[k] marks impulses k and k+1 merged. Every impulse is covered
    exactly once."""

    keep: np.ndarray
    merge: np.ndarray

    def __post_init__(self):
        keep = np.ascontiguousarray(self.keep, dtype=bool)
        merge = np.ascontiguousarray(self.merge, dtype=bool)
        object.__setattr__(self, "keep", keep)
        object.__setattr__(self, "merge", merge)
        n = keep.shape[0]
        if merge.shape[0] != max(n - 1, 0):
            raise ValueError("merge flags must have length n - 1")
        cover = keep.astype(int)
        cover[:-1] += merge.astype(int)
        cover[1:] += merge.astype(int)
        if n and not np.all(cover == 1):
            raise ValueError("selection must cover every impulse exactly once")

    @property
    def n_merges(self) -> int:
        return int(self.merge.sum())


def select_merges(d, m) -> MergeSelection:
    """Minimum-total-weight covering of the impulse chain.

    d[k] is the weight of keeping impulse k alone, m[k] the weight of the
    merged pair (k, k+1). Solved exactly by dynamic programming over the
    chain; ties broken toward fewer merges, then toward merging earlier
    pairs (lexicographically smallest selection vector).
    """
    d = np.asarray(d, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    n = d.shape[0]
    if m.shape[0] != max(n - 1, 0):
        raise ValueError(f"expected {max(n - 1, 0)} pair weights, got {m.shape[0]}")
    if np.any(d < 0.0) or np.any(m < 0.0):
        raise ValueError("weights must be nonnegative")

    # suffix table: best (cost, merges) covering impulses k..n-1
    INF = np.inf
    cost = np.empty(n + 2)
    merges = np.zeros(n + 2, dtype=np.int64)
    cost[n] = 0.0
    cost[n + 1] = INF
    for k in range(n - 1, -1, -1):
        ck = d[k] + cost[k + 1]
        mk = merges[k + 1]
        if k + 1 < n:
            cm = m[k] + cost[k + 2]
            mm = merges[k + 2] + 1
            if (cm, mm) < (ck, mk):
                ck, mk = cm, mm
        cost[k] = ck
        merges[k] = mk

    keep = np.zeros(n, dtype=bool)
    merge = np.zeros(max(n - 1, 0), dtype=bool)
    k = 0
    while k < n:
        if k + 1 < n:
            cm = m[k] + cost[k + 2]
            mm = merges[k + 2] + 1
            # prefer the merge on an exact tie: earlier merges are
            # lexicographically smaller selections
            if cm == cost[k] and mm == merges[k]:
                merge[k] = True
                k += 2
                continue
        keep[k] = True
        k += 1
    return MergeSelection(keep=keep, merge=merge)


def apply_merges(times, weights, sel: MergeSelection, b1, b2) -> ImpulseTrain:
    """Materialize a merge selection: kept impulses stay at their times,
    merged pairs are replaced by their equivalent single impulse.
    Zero-weight entries are dropped."""
    times = np.asarray(times, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = times.shape[0]
    if sel.keep.shape[0] != n:
        raise ValueError("selection does not match the weight vector")
    taus_all, ms_all = merge_adjacent(b1, b2, times, weights)
    out_t = []
    out_d = []
    k = 0
    while k < n:
        if sel.keep[k]:
            if weights[k] > 0.0:
                out_t.append(times[k])
                out_d.append(weights[k])
            k += 1
        else:
            if ms_all[k] > 0.0:
                out_t.append(taus_all[k])
                out_d.append(ms_all[k])
            k += 2
    return ImpulseTrain(np.array(out_t), np.array(out_d))
