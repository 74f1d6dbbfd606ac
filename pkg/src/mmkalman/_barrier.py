"""Compiled inner loops of the log-barrier QCQP solver.

Constraints are stacked as ``g_j(z) = z^T M_j z + q_j^T z + r_j``.  Both
routines record one ``(phase, mu, merit)`` entry per accepted Newton step in
the preallocated history arrays and return how many steps they used, so the
caller can enforce a global Newton-step budget.
"""

import numpy as np
from numba import njit

from ._kernels import _chol, _chol_solve

PHASE1, CENTER = 0, 1


@njit(cache=True)
def _g(Ms, qs, rs, z, out):
    m, n = qs.shape
    for j in range(m):
        s = rs[j]
        for a in range(n):
            s += qs[j, a] * z[a]
            t = 0.0
            for c in range(n):
                t += Ms[j, a, c] * z[c]
            s += z[a] * t
        out[j] = s


@njit(cache=True)
def _jac(Ms, qs, z, J):
    m, n = qs.shape
    for j in range(m):
        for a in range(n):
            t = qs[j, a]
            for c in range(n):
                t += 2.0 * Ms[j, a, c] * z[c]
            J[j, a] = t


@njit(cache=True)
def _newton_dir(K, grad, L, out):
    if _chol(K, L):
        _chol_solve(L, grad, out)
    else:
        out[:] = np.linalg.lstsq(K, grad)[0]
    for i in range(out.shape[0]):
        out[i] = -out[i]


@njit(cache=True)
def _quad(H, b, z):
    n = z.shape[0]
    s = 0.0
    for a in range(n):
        t = 0.0
        for c in range(n):
            t += H[a, c] * z[c]
        s += z[a] * (0.5 * t + b[a])
    return s


@njit(cache=True)
def phase1(Ms, qs, rs, z0, budget, h_phase, h_mu, h_merit, h_start):
    """Barrier on ``min s  s.t.  g_j(z) <= s`` until some z has ``max g < 0``.

    Returns ``(z, feasible, steps_used, n_history)``.
    """
    m, p = qs.shape
    z = z0.copy()
    g = np.empty(m)
    gn = np.empty(m)
    J = np.empty((m, p))
    K = np.empty((p + 1, p + 1))
    L = np.zeros((p + 1, p + 1))
    grad = np.empty(p + 1)
    step = np.empty(p + 1)
    zn = np.empty(p)
    _g(Ms, qs, rs, z, g)
    s = g.max() + max(1.0, abs(g.max()))
    mu = 1.0
    used = 0
    nh = h_start
    while True:
        for _ in range(50):
            _g(Ms, qs, rs, z, g)
            if g.max() < 0:
                break
            _jac(Ms, qs, z, J)
            d = s - g
            w = mu / d
            v = w / d
            K[:, :] = 0.0
            for a in range(p):
                t = 0.0
                for j in range(m):
                    t += J[j, a] * w[j]
                grad[a] = t
            grad[p] = 1.0 - w.sum()
            for a in range(p):
                for c in range(p):
                    t = 0.0
                    for j in range(m):
                        t += 2.0 * w[j] * Ms[j, a, c] + v[j] * J[j, a] * J[j, c]
                    K[a, c] = t
                t = 0.0
                for j in range(m):
                    t -= J[j, a] * v[j]
                K[a, p] = t
                K[p, a] = t
            K[p, p] = v.sum()
            ridge = 1e-12 * (1.0 + np.trace(K))
            for a in range(p):
                K[a, a] += ridge
            _newton_dir(K, grad, L, step)
            dec = -(grad @ step)
            if dec / 2 <= 1e-12 or used >= budget:
                break
            used += 1
            merit0 = s - mu * np.log(d).sum()
            t = 1.0
            ok = False
            merit = 0.0
            sn = s
            while t > 1e-16:
                for a in range(p):
                    zn[a] = z[a] + t * step[a]
                sn = s + t * step[p]
                _g(Ms, qs, rs, zn, gn)
                dn = sn - gn
                if np.all(dn > 0):
                    merit = sn - mu * np.log(dn).sum()
                    if merit <= merit0 - 0.25 * t * dec:
                        ok = True
                        break
                t *= 0.5
            if not ok:
                break
            z[:] = zn
            s = sn
            h_phase[nh] = PHASE1
            h_mu[nh] = mu
            h_merit[nh] = merit
            nh += 1
        _g(Ms, qs, rs, z, g)
        if g.max() < 0:
            return z, True, used, nh
        if s - m * mu > 0 or mu < 1e-14 or used >= budget:
            return z, False, used, nh
        mu /= 10.0


@njit(cache=True)
def central_path(H, b, Ms, qs, rs, z0, tol, budget, newton_tol, h_phase, h_mu, h_merit, h_start):
    """Follow the central path from a strictly feasible ``z0``.

    ``mu`` starts at 1 and is divided by 10 after each centering until
    ``m * mu < tol``.  Returns ``(z, mu, steps_used, n_history)``.
    """
    m, p = qs.shape
    z = z0.copy()
    g = np.empty(m)
    gn = np.empty(m)
    J = np.empty((m, p))
    K = np.empty((p, p))
    L = np.zeros((p, p))
    grad = np.empty(p)
    step = np.empty(p)
    zn = np.empty(p)
    mu = 1.0
    used = 0
    nh = h_start
    _g(Ms, qs, rs, z, g)
    if g.max() >= 0:
        return z, mu, used, nh
    while True:
        while True:
            _g(Ms, qs, rs, z, g)
            _jac(Ms, qs, z, J)
            d = -g
            w = mu / d
            v = w / d
            for a in range(p):
                t = b[a]
                for c in range(p):
                    t += H[a, c] * z[c]
                for j in range(m):
                    t += J[j, a] * w[j]
                grad[a] = t
                for c in range(p):
                    t = H[a, c]
                    for j in range(m):
                        t += 2.0 * w[j] * Ms[j, a, c] + v[j] * J[j, a] * J[j, c]
                    K[a, c] = t
            _newton_dir(K, grad, L, step)
            dec = -(grad @ step)
            if dec / 2 <= newton_tol or used >= budget:
                break
            used += 1
            merit0 = _quad(H, b, z) - mu * np.log(d).sum()
            t = 1.0
            ok = False
            merit = 0.0
            while t > 1e-16:
                for a in range(p):
                    zn[a] = z[a] + t * step[a]
                _g(Ms, qs, rs, zn, gn)
                if np.all(gn < 0):
                    merit = _quad(H, b, zn) - mu * np.log(-gn).sum()
                    if merit <= merit0 - 0.25 * t * dec:
                        ok = True
                        break
                t *= 0.5
            if not ok:
                break
            z[:] = zn
            h_phase[nh] = CENTER
            h_mu[nh] = mu
            h_merit[nh] = merit
            nh += 1
        if m * mu < tol or used >= budget:
            break
        mu /= 10.0
    return z, mu, used, nh
