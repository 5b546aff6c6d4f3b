"""Compiled numerical cores: active-set NNLS, trimmed reweighting, regressors, grid scans.

Everything in this module is deterministic: fixed iteration order, stable
sorts, lowest-index tie-breaks. No randomness, no shared state. The public
modules wrap these kernels with validation and richer result types.

Set NUMBA_DISABLE_JIT=1 to run the same code uncompiled (useful when
debugging; far slower).
"""

from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_ITER_LIMIT = 1
STATUS_OBJECTIVE_INCREASED = 2


@njit(cache=True, inline="always")
def kern_z(b1, b2, t):
    """Second-order impulse-response kernel for t >= 0 (0 for t < 0)."""
    if t < 0.0:
        return 0.0
    m = b1 if b1 > b2 else b2
    if abs(b1 - b2) < 1e-8 * m:
        return t * np.exp(-b2 * t)
    return (np.exp(-b2 * t) - np.exp(-b1 * t)) / (b1 - b2)


@njit(cache=True, inline="always")
def _uniform_period(times):
    """Sampling period when the grid is equidistant (to 1e-12 relative),
    else 0. Equidistant grids make the regressors Toeplitz in the impulse
    block, cutting the exponential count from K^2 to K."""
    K = times.shape[0]
    T = times[1] - times[0]
    for i in range(2, K):
        d = times[i] - times[i - 1]
        if abs(d - T) > 1e-12 * abs(T):
            return 0.0
    return T


@njit(cache=True)
def phi_first_order(omega, times):
    """Lower-triangular K x K matrix, entry (i, j) = exp(-omega (t_i - t_j))."""
    K = times.shape[0]
    out = np.zeros((K, K))
    T = _uniform_period(times)
    if T > 0.0:
        row = np.empty(K)
        for k in range(K):
            row[k] = np.exp(-omega * (k * T))
        for i in range(K):
            for j in range(i + 1):
                out[i, j] = row[i - j]
        return out
    for i in range(K):
        for j in range(i + 1):
            out[i, j] = np.exp(-omega * (times[i] - times[j]))
    return out

@njit(cache=True)
def phi_second_order(b1, b2, times):
    """K x K regressor: column 0 decaying initial state, columns 1..K-1
    impulse slots at t_1..t_{K-1} filled with the second-order kernel."""
    K = times.shape[0]
    out = np.zeros((K, K))
    T = _uniform_period(times)
    if T > 0.0:
        dec = np.empty(K)
        zrow = np.empty(K)
        for k in range(K):
            dec[k] = np.exp(-b2 * (k * T))
            zrow[k] = kern_z(b1, b2, k * T)
        for i in range(K):
            out[i, 0] = dec[i]
            for j in range(1, i + 2):
                if j < K:
                    out[i, j] = zrow[i - j + 1]
        return out
    for i in range(K):
        out[i, 0] = np.exp(-b2 * (times[i] - times[0]))
        for j in range(1, K):
            dt = times[i] - times[j - 1]
            if dt > 0.0:
                out[i, j] = kern_z(b1, b2, dt)
    return out


@njit(cache=True)
def _chol_factor(G):
    """Cholesky with a relative pivot guard. Returns (L, ok)."""
    n = G.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        s = G[i, i]
        for k in range(i):
            s -= L[i, k] * L[i, k]
        if G[i, i] <= 0.0 or s <= 1e-13 * G[i, i] or not np.isfinite(s):
            return L, False
        L[i, i] = np.sqrt(s)
        for j in range(i + 1, n):
            t = G[j, i]
            for k in range(i):
                t -= L[j, k] * L[i, k]
            L[j, i] = t / L[i, i]
    return L, True


@njit(cache=True)
def _chol_solve(L, b):
    n = L.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _restricted_ls(phi, y, w, idx):
    """Weighted least squares on the columns listed in idx.

    Normal equations with one iterative-refinement pass; falls back to a
    backward-stable lstsq on the sqrt(w)-scaled columns if the Gram matrix
    is numerically rank deficient.
    """
    p = idx.shape[0]
    K = phi.shape[0]
    G = np.empty((p, p))
    rhs = np.empty(p)
    for a in range(p):
        ja = idx[a]
        s = 0.0
        for k in range(K):
            s += phi[k, ja] * w[k] * y[k]
        rhs[a] = s
        for b in range(a, p):
            jb = idx[b]
            s2 = 0.0
            for k in range(K):
                s2 += phi[k, ja] * w[k] * phi[k, jb]
            G[a, b] = s2
            G[b, a] = s2
    L, ok = _chol_factor(G)
    if ok:
        z = _chol_solve(L, rhs)
        res = np.empty(p)
        for a in range(p):
            s = rhs[a]
            for b in range(p):
                s -= G[a, b] * z[b]
            res[a] = s
        dz = _chol_solve(L, res)
        for a in range(p):
            z[a] += dz[a]
        return z
    A = np.empty((K, p))
    bvec = np.empty(K)
    for k in range(K):
        sw = np.sqrt(w[k])
        bvec[k] = sw * y[k]
        for a in range(p):
            A[k, a] = sw * phi[k, idx[a]]
    sol, _res, _rank, _sv = np.linalg.lstsq(A, bvec)
    return sol


@njit(cache=True)
def nnls_kernel_hinted(phi, y, w, hint):
    """Weighted nonnegative least squares by the active-set method.

    Minimizes sum_k w_k (y_k - (phi x)_k)^2 over x >= 0. Gradient tolerance
    is 1e-10 * max|phi^T W y|. hint proposes an initial passive set (used to
    warm-start parametric sweeps; it is repaired to a feasible restricted
    optimum before the standard iteration, so optimality is unaffected).
    Returns (x, weighted_rss, status).
    """
    K, M = phi.shape
    x = np.zeros(M)
    passive = np.zeros(M, np.bool_)
    tol = 0.0
    for j in range(M):
        s = 0.0
        for k in range(K):
            s += phi[k, j] * w[k] * y[k]
        a = abs(s)
        if a > tol:
            tol = a
    tol *= 1e-10

    status = STATUS_OK
    idx = np.empty(M, np.int64)

    # warm start: restricted solve on the hinted set, dropping nonpositive
    # components until feasible
    n_hint = 0
    for j in range(M):
        if hint[j]:
            passive[j] = True
            n_hint += 1
    repair = 0
    while n_hint > 0:
        repair += 1
        if repair > M + 2:
            for j in range(M):
                passive[j] = False
                x[j] = 0.0
            break
        p = 0
        for j in range(M):
            if passive[j]:
                idx[p] = j
                p += 1
        z = _restricted_ls(phi, y, w, idx[:p])
        allpos = True
        for a in range(p):
            if z[a] <= 0.0 or not np.isfinite(z[a]):
                allpos = False
                passive[idx[a]] = False
                n_hint -= 1
        if allpos:
            for a in range(p):
                x[idx[a]] = z[a]
            break

    r = np.empty(K)
    for k in range(K):
        s = y[k]
        for j in range(M):
            if x[j] != 0.0:
                s -= phi[k, j] * x[j]
        r[k] = s

    grad = np.empty(M)
    outer = 0
    inner_total = 0
    max_outer = 3 * M + 20
    max_inner = 10 * M + 50

    while True:
        outer += 1
        if outer > max_outer:
            status = STATUS_ITER_LIMIT
            break
        for j in range(M):
            s = 0.0
            for k in range(K):
                s += phi[k, j] * w[k] * r[k]
            grad[j] = s
        best = -1
        gbest = tol
        for j in range(M):
            if (not passive[j]) and grad[j] > gbest:
                gbest = grad[j]
                best = j
        if best < 0:
            break
        passive[best] = True

        while True:
            inner_total += 1
            if inner_total > max_inner:
                status = STATUS_ITER_LIMIT
                break
            p = 0
            for j in range(M):
                if passive[j]:
                    idx[p] = j
                    p += 1
            z = _restricted_ls(phi, y, w, idx[:p])
            allpos = True
            for a in range(p):
                if z[a] <= 0.0:
                    allpos = False
                    break
            if allpos:
                for j in range(M):
                    x[j] = 0.0
                for a in range(p):
                    x[idx[a]] = z[a]
                break
            alpha = 1.0e300
            who = -1
            for a in range(p):
                if z[a] <= 0.0:
                    xa = x[idx[a]]
                    denom = xa - z[a]
                    if denom <= 0.0:
                        val = 0.0
                    else:
                        val = xa / denom
                    if val < alpha:
                        alpha = val
                        who = a
            if who < 0:
                status = STATUS_ITER_LIMIT
                break
            for a in range(p):
                j = idx[a]
                x[j] = x[j] + alpha * (z[a] - x[j])
                if x[j] <= 0.0:
                    x[j] = 0.0
                    passive[j] = False
            x[idx[who]] = 0.0
            passive[idx[who]] = False
        if status != STATUS_OK:
            break
        for k in range(K):
            s = y[k]
            for j in range(M):
                if x[j] != 0.0:
                    s -= phi[k, j] * x[j]
            r[k] = s

    rss = 0.0
    for k in range(K):
        s = y[k]
        for j in range(M):
            if x[j] != 0.0:
                s -= phi[k, j] * x[j]
        rss += w[k] * s * s
    return x, rss, status


@njit(cache=True)
def nnls_kernel(phi, y, w):
    """Cold-start weighted NNLS (see nnls_kernel_hinted)."""
    return nnls_kernel_hinted(phi, y, w, np.zeros(phi.shape[1], np.bool_))


@njit(cache=True)
def trimmed_weights(r2, n_ones, frac):
    """Weight 1 for the n_ones smallest squared residuals, frac for the next,
    0 elsewhere. Ties broken toward the lower sample index (stable sort)."""
    K = r2.shape[0]
    order = np.argsort(r2, kind="mergesort")
    w = np.zeros(K)
    for a in range(n_ones):
        w[order[a]] = 1.0
    if frac > 0.0 and n_ones < K:
        w[order[n_ones]] = frac
    return w


@njit(cache=True)
def robust_nnls_kernel_hinted(phi, y, eps, hint, max_iter=50):
    """Trimmed NNLS: alternate weighted solves with weight reassignment until
    the weights reach a fixed point.

    Returns (x, weighted_rss, w, converged, n_iter, status). The weighted
    objective is checked to be non-increasing across iterations; a violation
    sets STATUS_OBJECTIVE_INCREASED.
    """
    K, M = phi.shape
    target = (1.0 - eps) * K
    n_ones = int(np.floor(target + 1e-12))
    frac = target - n_ones

    w = np.ones(K)
    x = np.zeros(M)
    rss = 0.0
    best_obj = np.inf
    best_x = np.zeros(M)
    best_w = np.ones(K)
    best_rss = 0.0
    prev_obj = np.inf
    status = STATUS_OK
    converged = False
    it = 0
    cur_hint = hint.copy()

    while it < max_iter:
        x, rss, st = nnls_kernel_hinted(phi, y, w, cur_hint)
        for j in range(M):
            cur_hint[j] = x[j] > 0.0
        if st != STATUS_OK:
            status = st
        feasible = it > 0  # initial all-ones weights do not sum to the target
        if feasible:
            if rss > prev_obj * (1.0 + 1e-12) + 1e-15:
                status = STATUS_OBJECTIVE_INCREASED
            if rss < best_obj:
                best_obj = rss
                best_rss = rss
                best_x = x.copy()
                best_w = w.copy()
        r2 = np.empty(K)
        for k in range(K):
            s = y[k]
            for j in range(M):
                if x[j] != 0.0:
                    s -= phi[k, j] * x[j]
            r2[k] = s * s
        w_new = trimmed_weights(r2, n_ones, frac)
        obj = 0.0
        for k in range(K):
            obj += w_new[k] * r2[k]
        if feasible and obj > rss * (1.0 + 1e-12) + 1e-15:
            status = STATUS_OBJECTIVE_INCREASED
        same = True
        for k in range(K):
            if w_new[k] != w[k]:
                same = False
                break
        if same:
            converged = True
            break
        prev_obj = obj
        w = w_new
        it += 1

    if converged:
        return x, rss, w, True, it, status
    return best_x, best_rss, best_w, False, it, status


@njit(cache=True)
def robust_nnls_kernel(phi, y, eps, max_iter=50):
    """Cold-start trimmed NNLS (see robust_nnls_kernel_hinted)."""
    return robust_nnls_kernel_hinted(
        phi, y, eps, np.zeros(phi.shape[1], np.bool_), max_iter
    )


@njit(cache=True)
def scan_residuals(times, y, order, b1, grid, eps_reg):
    """Concentrated residual f = rss + eps_reg on each grid value.

    order 1: grid holds the elimination rate. order 2: grid holds the slow
    rate b2, with b1 fixed. Returns (f, status).
    """
    n = grid.shape[0]
    K = times.shape[0]
    w = np.ones(K)
    f = np.empty(n)
    status = STATUS_OK
    hint = np.zeros(K, np.bool_)
    for i in range(n):
        if order == 1:
            phi = phi_first_order(grid[i], times)
        else:
            phi = phi_second_order(b1, grid[i], times)
        x, rss, st = nnls_kernel_hinted(phi, y, w, hint)
        for j in range(K):
            hint[j] = x[j] > 0.0
        if st != STATUS_OK:
            status = st
        f[i] = rss + eps_reg
    return f, status


@njit(cache=True)
def scan_residuals_robust(times, y, order, b1, grid, eps_reg, robust_eps, h):
    """Robust scan: trimmed solve at each grid value plus two extra weighted
    evaluations at +/- h under that value's frozen weights (for consistent
    finite differences).

    f_minus is NaN where grid - h is not a valid rate. Returns
    (f, f_plus, f_minus, W, all_converged, status).
    """
    n = grid.shape[0]
    K = times.shape[0]
    f = np.empty(n)
    fp = np.empty(n)
    fm = np.empty(n)
    W = np.empty((n, K))
    status = STATUS_OK
    all_converged = True
    hint = np.zeros(K, np.bool_)
    for i in range(n):
        if order == 1:
            phi = phi_first_order(grid[i], times)
        else:
            phi = phi_second_order(b1, grid[i], times)
        x, rss, w, conv, _it, st = robust_nnls_kernel_hinted(phi, y, robust_eps, hint)
        for j in range(K):
            hint[j] = x[j] > 0.0
        if st != STATUS_OK:
            status = st
        if not conv:
            all_converged = False
        f[i] = rss + eps_reg
        for k in range(K):
            W[i, k] = w[k]

        om = grid[i] + h
        if order == 1:
            phi2 = phi_first_order(om, times)
        else:
            phi2 = phi_second_order(b1, om, times)
        _x2, rss2, st2 = nnls_kernel_hinted(phi2, y, w, hint)
        if st2 != STATUS_OK:
            status = st2
        fp[i] = rss2 + eps_reg

        om = grid[i] - h
        if om > 0.0:
            if order == 1:
                phi3 = phi_first_order(om, times)
            else:
                phi3 = phi_second_order(b1, om, times)
            _x3, rss3, st3 = nnls_kernel_hinted(phi3, y, w, hint)
            if st3 != STATUS_OK:
                status = st3
            fm[i] = rss3 + eps_reg
        else:
            fm[i] = np.nan
    return f, fp, fm, W, all_converged, status


@njit(cache=True)
def scan_restricted_first_order(times, y, cols, grid):
    """Residual sum over the grid with the first-order regressor restricted
    to the given column indices (known impulse times)."""
    n = grid.shape[0]
    K = times.shape[0]
    m = cols.shape[0]
    w = np.ones(K)
    f = np.empty(n)
    status = STATUS_OK
    phi = np.empty((K, m))
    hint = np.zeros(m, np.bool_)
    for i in range(n):
        om = grid[i]
        for k in range(K):
            for a in range(m):
                dt = times[k] - times[cols[a]]
                if dt >= 0.0:
                    phi[k, a] = np.exp(-om * dt)
                else:
                    phi[k, a] = 0.0
        x, rss, st = nnls_kernel_hinted(phi, y, w, hint)
        for a in range(m):
            hint[a] = x[a] > 0.0
        if st != STATUS_OK:
            status = st
        f[i] = rss
    return f, status
