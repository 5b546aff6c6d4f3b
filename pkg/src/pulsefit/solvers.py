"""Dense constrained least squares: nonnegative, weighted, and outlier-trimmed.

The design matrix is a plain 2-D float array with K rows (samples) and M
columns (impulse slots / initial state). Problems here are small (M <= K of
order a hundred), so an exact active-set method is used throughout; all
solvers are pure functions with fixed iteration order and index tie-breaks,
so identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import STATUS_ITER_LIMIT, STATUS_OBJECTIVE_INCREASED, STATUS_OK


@dataclass(frozen=True)
class NnlsSolution:
    """Solution of a (weighted) nonnegative least squares problem.

    weights: optimal coefficient vector, elementwise >= 0.
    rss: residual sum of squares at the optimum (weighted when sample
         weights were supplied).
    support: indices of strictly positive coefficients.
    converged: False only when the trimmed solver hit its iteration cap
         (the best iterate is still returned).
    underdetermined: the effective sample size was below the number of
         columns; the solution is valid but not unique.
    """

    weights: np.ndarray
    rss: float
    support: np.ndarray
    converged: bool = True
    underdetermined: bool = False


@dataclass(frozen=True)
class RobustWeights:
    """Per-sample weights in [0, 1] summing to the effective sample size
    (1 - eps) * K, where eps bounds the fraction of corrupted samples."""

    w: np.ndarray
    eps: float

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if not 0.0 <= self.eps < 1.0:
            raise ValueError(f"eps must be in [0, 1), got {self.eps}")
        if w.ndim != 1:
            raise ValueError("weights must be a vector")
        if np.any(w < 0.0) or np.any(w > 1.0):
            raise ValueError("sample weights must lie in [0, 1]")
        target = (1.0 - self.eps) * w.shape[0]
        if abs(float(w.sum()) - target) > 1e-9:
            raise ValueError(
                f"weights sum {w.sum()} != effective sample size {target}"
            )

    @property
    def effective_sample_size(self) -> float:
        return (1.0 - self.eps) * self.w.shape[0]

    @classmethod
    def all_ones(cls, n: int) -> "RobustWeights":
        return cls(np.ones(n), 0.0)


def _validate_problem(phi, y):
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if phi.ndim != 2:
        raise ValueError("design matrix must be 2-D")
    if y.ndim != 1:
        raise ValueError("observation vector must be 1-D")
    if phi.shape[0] != y.shape[0]:
        raise ValueError(
            f"design matrix has {phi.shape[0]} rows but y has {y.shape[0]} entries"
        )
    if phi.shape[0] < 1 or phi.shape[1] < 1:
        raise ValueError("design matrix must have at least one row and column")
    if not np.all(np.isfinite(phi)):
        raise ValueError("design matrix contains non-finite entries")
    if not np.all(np.isfinite(y)):
        raise ValueError("observations contain non-finite entries")
    return phi, y


def _check_status(status):
    if status == STATUS_ITER_LIMIT:
        raise RuntimeError("active-set iteration limit exceeded")
    if status == STATUS_OBJECTIVE_INCREASED:
        raise RuntimeError("trimmed objective increased between iterations")


def solve_nnls(phi, y) -> NnlsSolution:
    """Global minimizer of ||y - phi theta||^2 over theta >= 0."""
    phi, y = _validate_problem(phi, y)
    x, rss, status = _kernels.nnls_kernel(phi, y, np.ones(phi.shape[0]))
    _check_status(status)
    return NnlsSolution(weights=x, rss=float(rss), support=np.flatnonzero(x > 0.0))


def solve_weighted_nnls(phi, y, w) -> NnlsSolution:
    """Minimizer of sum_k w_k (y_k - (phi theta)_k)^2 over theta >= 0.

    w may be a RobustWeights or a plain vector of per-sample weights. The
    rss field holds the weighted residual sum.
    """
    phi, y = _validate_problem(phi, y)
    wv = w.w if isinstance(w, RobustWeights) else np.asarray(w, dtype=np.float64)
    if wv.shape[0] != y.shape[0]:
        raise ValueError(f"weight vector has length {wv.shape[0]}, expected {y.shape[0]}")
    if not np.all(np.isfinite(wv)) or np.any(wv < 0.0):
        raise ValueError("sample weights must be finite and nonnegative")
    x, rss, status = _kernels.nnls_kernel(phi, y, np.ascontiguousarray(wv))
    _check_status(status)
    return NnlsSolution(weights=x, rss=float(rss), support=np.flatnonzero(x > 0.0))


def solve_robust_nnls(phi, y, eps) -> tuple[NnlsSolution, RobustWeights]:
    """Outlier-trimmed NNLS.

    Alternates (i) weighted NNLS at the current sample weights with (ii)
    reassignment of weights: 1 for the floor((1-eps)K) smallest squared
    residuals, a fractional weight for the next smallest so the weights sum
    to (1-eps)K exactly, 0 elsewhere (ties to the lower sample index).
    Stops when the weights repeat, or after 50 alternations (best iterate
    returned, converged=False).
    """
    phi, y = _validate_problem(phi, y)
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"eps must be in [0, 1), got {eps}")
    K, M = phi.shape
    underdetermined = (1.0 - eps) * K < M
    if underdetermined:
        warnings.warn(
            f"effective sample size {(1.0 - eps) * K:.3f} is below the "
            f"number of columns {M}; solution is not unique",
            stacklevel=2,
        )
    x, rss, w, converged, _n_iter, status = _kernels.robust_nnls_kernel(phi, y, eps)
    _check_status(status)
    sol = NnlsSolution(
        weights=x,
        rss=float(rss),
        support=np.flatnonzero(x > 0.0),
        converged=bool(converged),
        underdetermined=underdetermined,
    )
    return sol, RobustWeights(w=w, eps=eps)


def kkt_violation(phi, y, solution: NnlsSolution, w=None) -> float:
    """Largest violation of the NNLS optimality conditions.

    On the support the gradient of the objective must vanish; off the
    support it must be nonnegative (so the signed gradient of the fit,
    phi^T W (y - phi theta), must be <= 0 up to tolerance).
    """
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    wv = np.ones(y.shape[0]) if w is None else (
        w.w if isinstance(w, RobustWeights) else np.asarray(w, dtype=np.float64)
    )
    g = phi.T @ (wv * (y - phi @ solution.weights))
    on = np.zeros(phi.shape[1], dtype=bool)
    on[solution.support] = True
    viol = 0.0
    if on.any():
        viol = float(np.max(np.abs(g[on])))
    if (~on).any():
        viol = max(viol, float(np.max(g[~on])))
    return viol


def kkt_tolerance(phi, y, w=None) -> float:
    """The solver's gradient tolerance, 1e-10 * ||phi^T W y||_inf."""
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    wv = np.ones(y.shape[0]) if w is None else (
        w.w if isinstance(w, RobustWeights) else np.asarray(w, dtype=np.float64)
    )
    return 1e-10 * float(np.max(np.abs(phi.T @ (wv * y))))
