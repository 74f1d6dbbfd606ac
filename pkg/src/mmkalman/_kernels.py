"""Compiled kernel for the unconstrained Student-t MM filter.

Mirrors ``filters.predict`` / ``filters.mm_update`` / ``filters.adaptive_R`` /
``filters.covariance_update`` for the case without constraints, where every
MM subproblem is a linear solve.  The pure-numpy path in ``filters`` remains
the reference; the test-suite checks the two agree.

State dimensions are tiny, so the linear algebra is written out as loops
(Cholesky) rather than calling LAPACK, whose per-call overhead dominates at
this size.
"""

import time

import numpy as np
from numba import njit, objmode

LOG, SMOOTH = 0, 1
R_LOG_MATCH, R_INVERSE_WEIGHT = 0, 1
MAX_PRIOR_COND = 1e12


@njit(cache=True)
def _now():
    # about half a microsecond per call; small next to one filter step
    with objmode(t="int64"):
        t = time.perf_counter_ns()
    return t


@njit(cache=True)
def _chol(A, L):
    """Lower Cholesky factor of SPD ``A`` into ``L``; False if not PD."""
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _chol_solve(L, b, out):
    n = L.shape[0]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True)
def _spd_inverse(A, L):
    n = A.shape[0]
    inv = np.empty((n, n))
    e = np.zeros(n)
    col = np.empty(n)
    _chol(A, L)
    for j in range(n):
        e[:] = 0.0
        e[j] = 1.0
        _chol_solve(L, e, col)
        inv[:, j] = col
    return 0.5 * (inv + inv.T)


@njit(cache=True)
def _inv_prior(P, L):
    """Inverse of the prior covariance, ridged when its condition number exceeds 1e12."""
    n = P.shape[0]
    P = 0.5 * (P + P.T)
    ok = _chol(P, L)
    ridge = not ok
    if ok:
        # cond <= trace^n / det; only pay for eigenvalues when that bound is inconclusive
        tr = np.trace(P)
        logdet = 0.0
        for i in range(n):
            logdet += 2.0 * np.log(L[i, i])
        if n * np.log(tr) - logdet > np.log(MAX_PRIOR_COND):
            w = np.linalg.eigvalsh(P)
            ridge = w[0] <= 0.0 or w[-1] / w[0] > MAX_PRIOR_COND
    if ridge:
        P = P + (1e-10 * max(np.trace(P), 1e-300) / n) * np.eye(n)
    return _spd_inverse(P, L)


@njit(cache=True)
def _F(Pinv, mean, C, y, s2nu, nu, x):
    n = x.shape[0]
    q = 0.0
    for i in range(n):
        for j in range(n):
            q += (x[i] - mean[i]) * Pinv[i, j] * (x[j] - mean[j])
    for i in range(C.shape[0]):
        r = -y[i]
        for j in range(n):
            r += C[i, j] * x[j]
        q += (1.0 + nu[i]) * np.log1p(r * r / s2nu[i])
    return q


@njit(cache=True)
def _u_over_log1p(u):
    # series below 1e-5 keeps the ratio monotone where log1p(u)/u rounds noisily
    if u < 1e-5:
        return 1.0 + u * (0.5 - u * (1.0 / 12.0 - u / 24.0))
    return u / np.log1p(u)


@njit(cache=True)
def tfmm_step(A, C, Q, s2nu, nu, sigma2, L, mean, cov, y, do_predict,
              surrogate, r_mode, mm_tol, mm_max_iter, F_hist):
    """One filter step.  ``F_hist`` (length mm_max_iter + 1) receives F per accepted iterate."""
    n = mean.shape[0]
    ny = y.shape[0]
    if do_predict:
        mean = A @ mean
        cov = A @ cov @ A.T + Q
        cov = 0.5 * (cov + cov.T)
    Lf = np.zeros((n, n))
    Pinv = _inv_prior(cov, Lf)
    Pm = Pinv @ mean
    x = mean.copy()
    xn = np.empty(n)
    H = np.empty((n, n))
    b = np.empty(n)
    r = np.empty(ny)
    m = np.empty(ny)
    F = _F(Pinv, mean, C, y, s2nu, nu, x)
    F_hist[0] = F
    n_hist = 1
    iters = 0
    rejected = 0
    violations = 0
    while iters < mm_max_iter:
        for i in range(ny):
            r[i] = -y[i]
            for j in range(n):
                r[i] += C[i, j] * x[j]
            m[i] = (1.0 + nu[i]) / (s2nu[i] + r[i] * r[i])
        for a in range(n):
            for c in range(n):
                H[a, c] = 2.0 * Pinv[a, c]
            b[a] = -2.0 * Pm[a]
        if surrogate == LOG:
            for i in range(ny):
                for a in range(n):
                    b[a] -= 2.0 * C[i, a] * m[i] * y[i]
                    for c in range(n):
                        H[a, c] += 2.0 * m[i] * C[i, a] * C[i, c]
        else:
            for a in range(n):
                H[a, a] += L
                b[a] -= L * x[a]
            for i in range(ny):
                for a in range(n):
                    b[a] += 2.0 * C[i, a] * m[i] * r[i]
        for a in range(n):
            b[a] = -b[a]
        _chol(H, Lf)
        _chol_solve(Lf, b, xn)
        iters += 1
        Fn = _F(Pinv, mean, C, y, s2nu, nu, xn)
        if Fn > F:
            rejected += 1
            if Fn > F + 1e-12:
                violations += 1
            break
        step = np.max(np.abs(xn - x))
        x[:] = xn
        F = Fn
        F_hist[n_hist] = F
        n_hist += 1
        if step <= mm_tol:
            break

    R = np.empty(ny)
    for i in range(ny):
        w = -y[i]
        for j in range(n):
            w += C[i, j] * x[j]
        if r_mode == R_INVERSE_WEIGHT:
            R[i] = (s2nu[i] + w * w) / (1.0 + nu[i])
        elif abs(w) < 1e-8 * np.sqrt(sigma2[i]):
            R[i] = s2nu[i] / (1.0 + nu[i])
        else:
            R[i] = s2nu[i] / (1.0 + nu[i]) * _u_over_log1p(w * w / s2nu[i])

    PCt = cov @ C.T
    S = C @ PCt
    for i in range(ny):
        S[i, i] += R[i]
    Ls = np.zeros((ny, ny))
    Sinv = _spd_inverse(S, Ls)
    K = PCt @ Sinv
    post = cov - K @ (C @ cov)
    post = 0.5 * (post + post.T)
    return x, post, iters, rejected, violations, F, R, n_hist


@njit(cache=True)
def tfmm_run(A, C, Q, s2nu, nu, sigma2, L, x0, P0, Y, surrogate, r_mode, mm_tol, mm_max_iter,
             means, covs, iters, rejected, violations, F_final, R_out, F_hist, n_hist, wall_ns):
    """Whole run in one call; per-step outputs are written into the preallocated arrays."""
    mean = x0.copy()
    cov = P0.copy()
    for k in range(Y.shape[0]):
        t0 = _now()
        mean, cov, it, rej, viol, F, R, nh = tfmm_step(
            A, C, Q, s2nu, nu, sigma2, L, mean, cov, Y[k], k > 0,
            surrogate, r_mode, mm_tol, mm_max_iter, F_hist[k])
        wall_ns[k] = _now() - t0
        means[k] = mean
        covs[k] = cov
        iters[k] = it
        rejected[k] = rej
        violations[k] = viol
        F_final[k] = F
        R_out[k] = R
        n_hist[k] = nh
