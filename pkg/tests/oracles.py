"""Independent reference implementations used only by the tests.

They are written without sharing code with the package: plain loops, generic
iterative solvers, or closed forms.
"""

import math

import numpy as np
from scipy.optimize import brentq, minimize


def F_loop(prior_mean, prior_precision, C, y, sigma, nu, x):
    """MAP objective by explicit scalar loops."""
    n = len(x)
    quad = 0.0
    for i in range(n):
        for j in range(n):
            quad += (x[i] - prior_mean[i]) * prior_precision[i][j] * (x[j] - prior_mean[j])
    tail = 0.0
    for i in range(len(y)):
        r = sum(C[i][j] * x[j] for j in range(n)) - y[i]
        tail += (1 + nu[i]) * math.log(1 + r * r / (sigma[i] ** 2 * nu[i]))
    return quad + tail


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def conjugate_gradient(H, rhs, tol=1e-14, max_iter=1000):
    x = np.zeros_like(rhs)
    r = rhs - H @ x
    p = r.copy()
    rs = r @ r
    for _ in range(max_iter):
        if math.sqrt(rs) <= tol * max(1.0, np.linalg.norm(rhs)):
            break
        Hp = H @ p
        a = rs / (p @ Hp)
        x += a * p
        r -= a * Hp
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def joseph_update(P, C, R):
    S = C @ P @ C.T + R
    K = P @ C.T @ np.linalg.inv(S)
    I_KC = np.eye(P.shape[0]) - K @ C
    return I_KC @ P @ I_KC.T + K @ R @ K.T


def scalar_riccati_fixed_point(a, c, q, r, iters=10_000):
    """Posterior variance limit of the scalar Kalman recursion."""
    p = 1.0
    for _ in range(iters):
        prior = a * a * p + q
        p = prior - prior * c * c * prior / (c * c * prior + r)
    return p


def project_ellipsoid(M, q, r, x0):
    """Euclidean projection of x0 onto {x : x^T M x + q^T x + r <= 0}, M PSD.

    Solves the 1-D secular equation for the multiplier with brentq.
    """
    if x0 @ M @ x0 + q @ x0 + r <= 0:
        return x0.copy()

    def x_of(lam):
        return np.linalg.solve(np.eye(len(x0)) + 2 * lam * M, x0 - lam * q)

    def g(lam):
        x = x_of(lam)
        return x @ M @ x + q @ x + r

    hi = 1.0
    while g(hi) > 0:
        hi *= 2
        if hi > 1e12:
            raise ValueError("empty constraint set")
    lam = brentq(g, 0.0, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return x_of(lam)


def dual_qcqp(H, b, quads):
    """Optimal value of min 0.5 x^T H x + b^T x over intersecting ellipsoids, from the dual.

    For fixed multipliers the Lagrangian minimiser is closed form, so the dual
    is a smooth concave function of lam >= 0; it is maximised with the bound
    constrained quasi-Newton method of scipy.  Returns ``(x(lam*), d(lam*))``;
    ``d`` is a lower bound on the optimum and equals it under Slater.
    """
    Ms = np.array([q[0] for q in quads])
    qs = np.array([q[1] for q in quads])
    rs = np.array([q[2] for q in quads])

    def inner(lam):
        K = H + 2 * np.tensordot(lam, Ms, axes=1)
        h = b + lam @ qs
        x = -np.linalg.solve(K, h)
        return x, 0.5 * x @ K @ x + h @ x + lam @ rs

    def neg(lam):
        x, d = inner(lam)
        g = np.einsum("i,jik,k->j", x, Ms, x) + qs @ x + rs
        return -d, -g

    res = minimize(
        neg,
        np.zeros(len(quads)),
        jac=True,
        method="L-BFGS-B",
        bounds=[(0, None)] * len(quads),
        options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 20_000, "maxcor": 30},
    )
    return inner(res.x)


def radial_band_projection(x, rho, eps):
    """Closest point of the 2-D band rho-eps <= ||x|| <= rho+eps under the Euclidean norm."""
    r = np.linalg.norm(x)
    target = min(max(r, rho - eps), rho + eps)
    return x * (target / r)


def grad_ncvx_extended(C, y, sigma, nu, X):
    """Row-wise gradient of the Student-t data term in long double, for points ``X`` (k, n)."""
    ld = np.longdouble
    C, y, X = C.astype(ld), y.astype(ld), np.atleast_2d(X).astype(ld)
    s2nu = nu.astype(ld) * sigma.astype(ld) ** 2
    R = X @ C.T - y
    return 2 * ((1 + nu.astype(ld)) / (s2nu + R * R) * R) @ C
