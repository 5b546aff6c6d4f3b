"""One-step estimation pipeline.

The central object is the concentrated residual f: the least-squares error
after optimizing the nonnegative impulse weights at fixed linear parameters.
Minimizing f directly is ill-posed (a dense input fits anything), so the
preliminary estimate minimizes the Newton quotient N_f = -f / f' over the
region where f is monotonically decreasing, and a single Newton step
refines it. Impulse counts are then chosen by matching the residual of a
sparsified refit to the quadratic prediction at the refined point, and a
point estimate along the resulting curve is picked by BIC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import (
    ImpulseTrain,
    SamplingGrid,
    TimeSeries,
    apply_merges,
    merge_adjacent,
    regressor_first_order,
    regressor_second_order,
    second_order_kernel,
    select_merges,
)
from .solvers import (
    NnlsSolution,
    RobustWeights,
    solve_nnls,
    solve_robust_nnls,
    solve_weighted_nnls,
)


class DegenerateScanError(RuntimeError):
    """The residual scan has no feasible minimizer (empty monotone region)."""


@dataclass(frozen=True)
class ScanConfig:
    """Configuration of a one-dimensional residual scan.

    interval: scanned parameter range (lo, hi), lo < hi.
    grid_points: uniform grid resolution (>= 3).
    eps_reg: positive constant added to the residual so that N_f stays
        bounded away from degenerate perfect fits; when None it is
        estimated from the first differences of the data.
    robust_eps: upper bound on the fraction of corrupted samples;
        0 disables the robust solver.
    n_max: cap on the number of estimated impulses; None means ceil(K / 4).
    """

    interval: tuple
    grid_points: int = 200
    eps_reg: float | None = None
    robust_eps: float = 0.0
    n_max: int | None = None

    def __post_init__(self):
        lo, hi = self.interval
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"invalid interval {self.interval}")
        if self.grid_points < 3:
            raise ValueError("grid_points must be at least 3")
        if self.eps_reg is not None and not self.eps_reg >= 0.0:
            raise ValueError("eps_reg must be nonnegative")
        if not 0.0 <= self.robust_eps < 1.0:
            raise ValueError("robust_eps must be in [0, 1)")
        if self.n_max is not None and self.n_max < 0:
            raise ValueError("n_max must be nonnegative")

    def grid(self) -> np.ndarray:
        return np.linspace(self.interval[0], self.interval[1], self.grid_points)

    @property
    def step(self) -> float:
        return (self.interval[1] - self.interval[0]) / (self.grid_points - 1)


def default_eps_reg(values) -> float:
    """Regularization constant from a robust first-difference noise scale."""
    v = np.asarray(values, dtype=np.float64)
    return 0.5 * float(np.median(np.diff(v) ** 2)) / 0.4549**2


@dataclass
class ResidualScan:
    """Concentrated residual tabulated on a uniform grid.

    df_values holds the finite-difference derivative; the feasible region
    (monotonically decreasing residual) is the grid prefix 0..feasible_upto.
    In robust mode f_plus / f_minus store the extra evaluations at +/- one
    grid step under each point's frozen sample weights, and weight_rows the
    weights themselves (one row per grid point).
    """

    omega_grid: np.ndarray
    f_values: np.ndarray
    df_values: np.ndarray
    feasible_upto: int
    bar_index: int
    eps_reg: float
    f_plus: np.ndarray | None = None
    f_minus: np.ndarray | None = None
    weight_rows: np.ndarray | None = None
    robust_eps: float = 0.0
    robust_converged: bool = True

    @property
    def step(self) -> float:
        return float(self.omega_grid[1] - self.omega_grid[0])

    def newton_quotient(self) -> np.ndarray:
        """-f/f' where the derivative is negative, +inf elsewhere."""
        nf = np.full(self.f_values.shape, np.inf)
        neg = self.df_values < 0.0
        nf[neg] = -self.f_values[neg] / self.df_values[neg]
        return nf

    def weights_at_bar(self) -> RobustWeights | None:
        if self.weight_rows is None:
            return None
        return RobustWeights(self.weight_rows[self.bar_index].copy(), self.robust_eps)

    def curvature_at_bar(self) -> float:
        """Second derivative of f at the preliminary point.

        Robust scans use the frozen-weight evaluations so the stencil is
        consistent; otherwise the grid values are used (shifted inward at
        the interval ends).
        """
        i = self.bar_index
        f = self.f_values
        h = self.step
        if (
            self.f_plus is not None
            and self.f_minus is not None
            and np.isfinite(self.f_minus[i])
        ):
            return float((self.f_minus[i] - 2.0 * f[i] + self.f_plus[i]) / h**2)
        j = min(max(i, 1), f.shape[0] - 2)
        return float((f[j - 1] - 2.0 * f[j] + f[j + 1]) / h**2)

    def quadratic_target(self) -> float:
        """Quadratic-model residual at the refined point: the impulse-count
        selection target.

        At the quotient minimizer the quadratic model ties the value, slope
        and curvature of f together, so its value at the refined point
        equals f(omega_bar) / 2 identically. That identity is used directly:
        the preliminary point is the grid minimizer of the quotient by
        construction, and the derivative-based equivalents (step^2 f'' / 2,
        or the quadratic's minimum f - f'^2 / (2 f'')) degrade when the
        residual valley is narrower than the grid step.
        """
        return 0.5 * float(self.f_values[self.bar_index])


@dataclass(frozen=True)
class OneStepEstimate:
    """Preliminary grid estimate, Newton quotient there, and refined point
    omega_hat = omega_bar + newton_step."""

    omega_bar: float
    newton_step: float
    omega_hat: float
    at_lower_boundary: bool


def newton_from_values(
    omega_grid,
    f_values,
    df_values=None,
    *,
    eps_reg: float = 0.0,
    f_plus=None,
    f_minus=None,
    weight_rows=None,
    robust_eps: float = 0.0,
    robust_converged: bool = True,
):
    """Preliminary point and one-step refinement from tabulated residuals.

    df_values defaults to central finite differences on the grid (one-sided
    at the ends). Injecting analytic derivatives through df_values is the
    seam used by the quadratic-exactness tests.
    """
    grid = np.asarray(omega_grid, dtype=np.float64)
    f = np.asarray(f_values, dtype=np.float64)
    n = grid.shape[0]
    if n < 3 or f.shape[0] != n:
        raise ValueError("need at least three grid points with matching residuals")
    h = grid[1] - grid[0]
    if df_values is None:
        df = np.gradient(f, h)
    else:
        df = np.asarray(df_values, dtype=np.float64)
        if df.shape[0] != n:
            raise ValueError("derivative values must match the grid")

    if df[0] > 0.0:
        raise DegenerateScanError(
            "residual is increasing at the start of the interval; "
            "no monotone-decreasing region"
        )
    rising = np.nonzero(df > 0.0)[0]
    feasible_upto = int(rising[0]) - 1 if rising.size else n - 1

    nf = np.full(n, np.inf)
    neg = df < 0.0
    nf[neg] = -f[neg] / df[neg]
    prefix = nf[: feasible_upto + 1]
    bar_index = int(np.argmin(prefix))
    if not np.isfinite(prefix[bar_index]):
        raise DegenerateScanError(
            "no strictly decreasing grid point in the feasible region"
        )
    step = float(prefix[bar_index])
    if f[bar_index] > 0.0 and step < 0.0:
        raise AssertionError("Newton quotient must be nonnegative on the feasible region")

    omega_bar = float(grid[bar_index])
    est = OneStepEstimate(
        omega_bar=omega_bar,
        newton_step=step,
        omega_hat=omega_bar + step,
        at_lower_boundary=bar_index == 0,
    )
    scan = ResidualScan(
        omega_grid=grid,
        f_values=f,
        df_values=df,
        feasible_upto=feasible_upto,
        bar_index=bar_index,
        eps_reg=eps_reg,
        f_plus=None if f_plus is None else np.asarray(f_plus, dtype=np.float64),
        f_minus=None if f_minus is None else np.asarray(f_minus, dtype=np.float64),
        weight_rows=weight_rows,
        robust_eps=robust_eps,
        robust_converged=robust_converged,
    )
    return scan, est


def _resolve_eps(cfg: ScanConfig, values) -> float:
    return cfg.eps_reg if cfg.eps_reg is not None else default_eps_reg(values)


def concentrated_residual(
    omega,
    data: TimeSeries,
    cfg: ScanConfig,
    *,
    order: int = 1,
    b1: float | None = None,
    y0: float = 0.0,
    fixed_weights: RobustWeights | None = None,
):
    """Residual f at a single parameter point: build the regressor, solve
    the (robust / weighted / plain) nonnegative fit, return rss + eps_reg.

    With fixed_weights the weighted solver is used as-is (no reweighting);
    this is what keeps finite differences consistent in robust mode.
    Returns (f, solution, weights).
    """
    eps = _resolve_eps(cfg, data.values)
    y = data.values - y0
    if order == 1:
        phi = regressor_first_order(omega, data.grid)
    elif order == 2:
        if b1 is None:
            raise ValueError("second-order residual needs the fast rate b1")
        phi = regressor_second_order(b1, omega, data.grid)
    else:
        raise ValueError(f"unsupported model order {order}")

    if fixed_weights is not None:
        sol = solve_weighted_nnls(phi, y, fixed_weights)
        weights = fixed_weights
    elif cfg.robust_eps > 0.0:
        sol, weights = solve_robust_nnls(phi, y, cfg.robust_eps)
    else:
        sol = solve_nnls(phi, y)
        weights = RobustWeights.all_ones(len(y))
    return float(sol.rss + eps), sol, weights


def scan_newton_quotient(
    data: TimeSeries,
    cfg: ScanConfig,
    *,
    order: int = 1,
    b1: float | None = None,
    y0: float = 0.0,
):
    """Evaluate f over the configured grid and take the one-step estimate.

    Non-robust scans differentiate the grid values directly. Robust scans
    re-evaluate f at +/- one grid step under each point's frozen weights,
    so quotient and curvature use a consistent weighting.
    """
    if order not in (1, 2):
        raise ValueError(f"unsupported model order {order}")
    if order == 2 and b1 is None:
        raise ValueError("second-order scan needs the fast rate b1")
    eps = _resolve_eps(cfg, data.values)
    grid = cfg.grid()
    y = np.ascontiguousarray(data.values - y0)
    times = data.grid.times
    b1v = 0.0 if b1 is None else float(b1)

    if cfg.robust_eps > 0.0:
        f, fp, fm, W, all_conv, status = _kernels.scan_residuals_robust(
            times, y, order, b1v, grid, eps, cfg.robust_eps, cfg.step
        )
        _raise_on_status(status)
        h = cfg.step
        df = np.where(np.isnan(fm), (fp - f) / h, (fp - fm) / (2.0 * h))
        return newton_from_values(
            grid,
            f,
            df,
            eps_reg=eps,
            f_plus=fp,
            f_minus=fm,
            weight_rows=W,
            robust_eps=cfg.robust_eps,
            robust_converged=bool(all_conv),
        )

    f, status = _kernels.scan_residuals(times, y, order, b1v, grid, eps)
    _raise_on_status(status)
    return newton_from_values(grid, f, eps_reg=eps)


def _raise_on_status(status):
    if status == _kernels.STATUS_ITER_LIMIT:
        raise RuntimeError("active-set iteration limit exceeded during scan")
    if status == _kernels.STATUS_OBJECTIVE_INCREASED:
        raise RuntimeError("trimmed objective increased during scan")


def estimate_first_order(data: TimeSeries, cfg: ScanConfig):
    """First-order pipeline: scan the elimination rate, refine it with one
    Newton step, then read the impulse train off the fit at the refined
    rate (weights below 1e-6 of the maximum are dropped).

    Returns (OneStepEstimate, ImpulseTrain).
    """
    scan, est = scan_newton_quotient(data, cfg, order=1)
    phi = regressor_first_order(est.omega_hat, data.grid)
    if cfg.robust_eps > 0.0:
        sol, _w = solve_robust_nnls(phi, data.values, cfg.robust_eps)
    else:
        sol = solve_nnls(phi, data.values)
    d = sol.weights
    if d.max() > 0.0:
        keep = d >= 1e-6 * d.max()
    else:
        keep = d > 0.0
    train = ImpulseTrain(data.grid.times[keep], d[keep])
    return est, train


@dataclass(frozen=True)
class KnownTimesFit:
    """Direct grid minimizer of the residual restricted to known impulse
    columns (the restricted residual has an interior minimum, so no Newton
    step is involved)."""

    omega: float
    rss: float


def fit_known_times(data: TimeSeries, times, cfg: ScanConfig) -> KnownTimesFit:
    """Minimize the residual restricted to the given impulse times (all of
    which must be sampling times) over the scan grid."""
    t = data.grid.times
    cols = []
    for tau in np.asarray(times, dtype=np.float64):
        j = int(np.searchsorted(t, tau))
        if j >= t.shape[0] or abs(t[j] - tau) > 1e-9:
            raise ValueError(f"impulse time {tau} is not a sampling time")
        cols.append(j)
    cols = np.unique(np.asarray(cols, dtype=np.int64))
    grid = cfg.grid()
    f, status = _kernels.scan_restricted_first_order(t, data.values, cols, grid)
    _raise_on_status(status)
    i = int(np.argmin(f))
    return KnownTimesFit(omega=float(grid[i]), rss=float(f[i]))


def bic_score(n_samples: int, rss: float, n_impulses: int) -> float:
    """K ln(rss) + 2 (n + 2) ln K; n impulses carry 2(n+2) parameters."""
    guarded = max(rss, 1e-300)
    return n_samples * math.log(guarded) + 2.0 * (n_impulses + 2) * math.log(n_samples)


def count_impulses(
    data: TimeSeries,
    b1: float,
    b2_hat: float,
    *,
    target_rss: float,
    n_max: int,
    y0: float = 0.0,
    weights: RobustWeights | None = None,
):
    """Sparsify the fit at (b1, b2_hat) down to the impulse count whose
    refit residual best matches the quadratic prediction target_rss.

    The dense on-grid fit is first reduced by merging consecutive impulses
    (minimum-total-weight covering), merged candidates are ranked by weight
    (ties to the earlier time), and for n = 0..n_max the residual of the
    refit on the n largest candidates plus the initial-state column is
    computed; n0 minimizes |rss_n - target_rss| with ties to smaller n.

    Returns (n0, rss_n0, ImpulseTrain) with refitted weights.
    """
    t = data.grid.times
    y = data.values - y0
    K = t.shape[0]
    wts = weights if weights is not None else RobustWeights.all_ones(K)

    phi = regressor_second_order(b1, b2_hat, data.grid)
    sol = solve_weighted_nnls(phi, y, wts)
    d = sol.weights[1:]
    slot_times = t[:-1]

    if slot_times.shape[0] >= 2:
        _taus, ms = merge_adjacent(b1, b2_hat, slot_times, d)
    else:
        ms = np.empty(0)
    sel = select_merges(d, ms)
    merged = apply_merges(slot_times, d, sel, b1, b2_hat)

    order = np.lexsort((merged.times, -merged.weights))
    cand_times = merged.times[order]
    n_top = min(n_max, cand_times.shape[0])

    fn = np.empty(n_top + 1)
    refits = []
    for n in range(n_top + 1):
        chosen = np.sort(cand_times[:n])
        A = np.empty((K, n + 1))
        A[:, 0] = np.exp(-b2_hat * (t - t[0]))
        for a, tau in enumerate(chosen):
            A[:, a + 1] = second_order_kernel(b1, b2_hat, t - tau)
        s = solve_weighted_nnls(A, y, wts)
        fn[n] = s.rss
        refits.append((chosen, s))

    n0 = int(np.argmin(np.abs(fn - target_rss)))
    chosen, s = refits[n0]
    pos = s.weights[1:] > 0.0
    train = ImpulseTrain(chosen[pos], s.weights[1:][pos], init_x2=float(s.weights[0]))
    return n0, float(fn[n0]), train


@dataclass
class GammaPoint:
    """One slice of the gamma curve: the one-step slow-rate estimate at a
    fixed fast rate, with its sparsified impulse train and BIC."""

    b1: float
    b2_bar: float
    b2_hat: float
    target_rss: float
    n_impulses: int
    rss: float
    impulses: ImpulseTrain
    bic: float
    weights: RobustWeights | None = None

    @property
    def newton_step(self) -> float:
        return self.b2_hat - self.b2_bar


@dataclass
class GammaCurve:
    """Gamma curve: the family of candidate estimates (b1, b2_hat(b1))
    traced by scanning the fast rate, with its Pareto front over impulse
    counts and the BIC selection."""

    points: list
    gaps: list
    pareto: dict
    bic_n: int
    bic_point: GammaPoint
    robust_converged: bool = True


def gamma_curve(
    data: TimeSeries,
    cfg_b1: ScanConfig,
    cfg_b2: ScanConfig,
    *,
    y0: float = 0.0,
) -> GammaCurve:
    """Trace the gamma curve over the fast-rate grid.

    For each b1 the slow rate is scanned and refined, the quadratic
    prediction of the residual at the refined point is formed from the
    curvature at the preliminary point, and the impulse count is selected
    by matching it. Degenerate slices are recorded as gaps, not errors.
    """
    K = len(data)
    n_max = cfg_b2.n_max if cfg_b2.n_max is not None else -(-K // 4)
    points = []
    gaps = []
    robust_converged = True
    for b1 in cfg_b1.grid():
        try:
            scan, est = scan_newton_quotient(data, cfg_b2, order=2, b1=b1, y0=y0)
        except DegenerateScanError:
            gaps.append(float(b1))
            continue
        robust_converged = robust_converged and scan.robust_converged
        target = scan.quadratic_target()
        w_bar = scan.weights_at_bar()
        n0, rss_n, train = count_impulses(
            data,
            float(b1),
            est.omega_hat,
            target_rss=target,
            n_max=n_max,
            y0=y0,
            weights=w_bar,
        )
        points.append(
            GammaPoint(
                b1=float(b1),
                b2_bar=est.omega_bar,
                b2_hat=est.omega_hat,
                target_rss=target,
                n_impulses=n0,
                rss=rss_n,
                impulses=train,
                bic=bic_score(K, rss_n, n0),
                weights=w_bar,
            )
        )
    if not points:
        raise DegenerateScanError("every fast-rate slice was degenerate")
    pareto = {}
    for pt in points:
        cur = pareto.get(pt.n_impulses)
        if cur is None or pt.rss < cur.rss:
            pareto[pt.n_impulses] = pt
    bic_n, bic_point = select_by_bic(pareto, K, n_max)
    return GammaCurve(
        points=points,
        gaps=gaps,
        pareto=pareto,
        bic_n=bic_n,
        bic_point=bic_point,
        robust_converged=robust_converged,
    )


def select_by_bic(pareto: dict, n_samples: int, n_max: int):
    """BIC-minimizing impulse count over the Pareto set (ties to smaller n).

    Returns (n, point)."""
    best_n = None
    best_score = np.inf
    for n in sorted(pareto):
        if n > n_max:
            continue
        score = bic_score(n_samples, pareto[n].rss, n)
        if score < best_score:
            best_score = score
            best_n = n
    if best_n is None:
        raise ValueError("empty candidate set")
    return best_n, pareto[best_n]


@dataclass
class BasalCell:
    """One (b1, y0) cell of the basal-level sweep."""

    y0: float
    b2_bar: float
    b2_hat: float
    n_impulses: int
    rss: float
    bic: float
    degenerate: bool = False


@dataclass
class BasalCurve:
    """Sweep over the basal grid at a fixed fast rate, with the
    BIC-minimizing cell and its impulse train."""

    b1: float
    cells: list
    best_index: int | None
    best_impulses: ImpulseTrain | None
    best_weights: RobustWeights | None


@dataclass
class BasalEstimate:
    """Joint basal-level / elimination-rate estimate: per-b1 sweeps plus
    the overall BIC selection."""

    curves: list
    b1: float
    b2: float
    y0: float
    bic: float
    impulses: ImpulseTrain
    weights: RobustWeights | None
    robust_converged: bool = True


def estimate_basal(
    data: TimeSeries,
    cfg_b1: ScanConfig,
    cfg_b2: ScanConfig,
    cfg_y0: ScanConfig,
) -> BasalEstimate:
    """Estimate the basal level together with both elimination rates.

    For each fast rate on a coarse grid and each basal level on its grid,
    the basal level is subtracted, the slow rate is scanned and refined,
    and the impulse count selected; the BIC-minimizing cell wins per b1 and
    across b1. Degenerate cells are recorded as gaps.
    """
    K = len(data)
    n_max = cfg_b2.n_max if cfg_b2.n_max is not None else -(-K // 4)
    curves = []
    robust_converged = True
    for b1 in cfg_b1.grid():
        cells = []
        best_index = None
        best_bic = np.inf
        best_impulses = None
        best_weights = None
        for y0 in cfg_y0.grid():
            try:
                scan, est = scan_newton_quotient(
                    data, cfg_b2, order=2, b1=float(b1), y0=float(y0)
                )
            except DegenerateScanError:
                cells.append(
                    BasalCell(
                        y0=float(y0),
                        b2_bar=np.nan,
                        b2_hat=np.nan,
                        n_impulses=0,
                        rss=np.nan,
                        bic=np.inf,
                        degenerate=True,
                    )
                )
                continue
            robust_converged = robust_converged and scan.robust_converged
            target = scan.quadratic_target()
            w_bar = scan.weights_at_bar()
            n0, rss_n, train = count_impulses(
                data,
                float(b1),
                est.omega_hat,
                target_rss=target,
                n_max=n_max,
                y0=float(y0),
                weights=w_bar,
            )
            bic = bic_score(K, rss_n, n0)
            cells.append(
                BasalCell(
                    y0=float(y0),
                    b2_bar=est.omega_bar,
                    b2_hat=est.omega_hat,
                    n_impulses=n0,
                    rss=rss_n,
                    bic=bic,
                )
            )
            if bic < best_bic:
                best_bic = bic
                best_index = len(cells) - 1
                best_impulses = train
                best_weights = w_bar
        curves.append(
            BasalCurve(
                b1=float(b1),
                cells=cells,
                best_index=best_index,
                best_impulses=best_impulses,
                best_weights=best_weights,
            )
        )
    chosen = None
    for curve in curves:
        if curve.best_index is None:
            continue
        cell = curve.cells[curve.best_index]
        if chosen is None or cell.bic < chosen[1].bic:
            chosen = (curve, cell)
    if chosen is None:
        raise DegenerateScanError("every (b1, y0) cell was degenerate")
    curve, cell = chosen
    return BasalEstimate(
        curves=curves,
        b1=curve.b1,
        b2=cell.b2_hat,
        y0=cell.y0,
        bic=cell.bic,
        impulses=curve.best_impulses,
        weights=curve.best_weights,
        robust_converged=robust_converged,
    )


@dataclass(frozen=True)
class OutlyingProfile:
    """Outlying-profile diagnostic: flagged when the preliminary slow-rate
    estimate sits on the lower interval boundary, meaning the data look
    like slow drift rather than distinct impulse responses."""

    flag: bool
    omega_grid: np.ndarray
    nf_values: np.ndarray


def detect_outlying_profile(scan: ResidualScan, est: OneStepEstimate) -> OutlyingProfile:
    """Flag a completed slow-rate scan whose minimizer hit the lower
    boundary; the full Newton-quotient curve is included for plotting."""
    return OutlyingProfile(
        flag=est.at_lower_boundary,
        omega_grid=scan.omega_grid,
        nf_values=scan.newton_quotient(),
    )
