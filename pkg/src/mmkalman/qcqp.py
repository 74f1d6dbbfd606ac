"""Dense log-barrier solver for small strongly convex QCQPs.

    minimize    0.5 x^T H x + b^T x + c
    subject to  x^T M_j x + q_j^T x + r_j <= 0      (M_j PSD)
                A_eq x = b_eq                       (optional, eliminated)
                lower <= x <= upper                 (optional)

A phase-1 barrier finds a strictly feasible point when the start is not,
then Newton centering follows the central path with mu <- mu / 10 from
mu = 1 until ``m * mu < tol``.  The barrier point is finally polished with a
few Newton steps on the KKT system of the active set, which makes the
certified KKT residual independent of the barrier's ill-conditioning.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, null_space
from scipy.optimize import nnls

from . import _barrier
from .constraints import Constraint, ConvexQuad
from .objective import QuadraticSurrogate

__all__ = ["Status", "QcqpProblem", "QcqpSolution", "solve", "solve_unconstrained"]


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass
class QcqpProblem:
    H: np.ndarray
    b: np.ndarray
    c: float = 0.0
    constraints: Sequence[Constraint] = ()
    eq_A: np.ndarray | None = None
    eq_b: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        n = self.b.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.H.shape}")
        if self.eq_A is not None:
            self.eq_A = np.atleast_2d(np.asarray(self.eq_A, dtype=float))
            self.eq_b = np.asarray(self.eq_b, dtype=float).reshape(-1)
            if self.eq_A.shape != (self.eq_b.shape[0], n):
                raise ValueError("eq_A / eq_b shapes do not match the problem dimension")

    @classmethod
    def from_surrogate(cls, surrogate: QuadraticSurrogate, constraints=(), **kw) -> "QcqpProblem":
        return cls(surrogate.H, surrogate.b, surrogate.c, list(constraints), **kw)

    @property
    def n(self) -> int:
        return self.b.shape[0]

    def objective(self, x) -> float:
        return float(0.5 * x @ self.H @ x + self.b @ x + self.c)

    def quadratic_forms(self):
        """Stack every inequality (box bounds included) as ``(Ms, qs, rs)``."""
        n = self.n
        quads: list[ConvexQuad] = [c.to_quadratic(n) for c in self.constraints]
        Ms = [q.M for q in quads]
        qs = [q.q for q in quads]
        rs = [q.r for q in quads]
        eye = np.eye(n)
        for bound, sign in ((self.upper, 1.0), (self.lower, -1.0)):
            if bound is None:
                continue
            for i, v in enumerate(np.broadcast_to(np.asarray(bound, dtype=float), (n,))):
                if np.isfinite(v):
                    Ms.append(np.zeros((n, n)))
                    qs.append(sign * eye[i])
                    rs.append(-sign * v)
        if not Ms:
            return np.zeros((0, n, n)), np.zeros((0, n)), np.zeros(0)
        return np.array(Ms), np.array(qs), np.array(rs, dtype=float)


@dataclass
class QcqpSolution:
    x: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    status: Status
    objective: float = float("nan")
    eq_multipliers: np.ndarray | None = None
    history: list = field(default_factory=list, repr=False)


def solve_unconstrained(obj) -> np.ndarray:
    """Minimiser ``-H^{-1} b`` of a strongly convex quadratic via Cholesky.

    ``obj`` is a :class:`QuadraticSurrogate` or an ``(H, b)`` pair.
    """
    H, b = (obj.H, obj.b) if isinstance(obj, QuadraticSurrogate) else obj
    try:
        fac = cho_factor(H)
    except LinAlgError as exc:
        raise ValueError("quadratic is not strictly convex (Cholesky failed)") from exc
    return -cho_solve(fac, b)


class _Reduced:
    """Inequality-only problem in the coordinates left after equality elimination."""

    def __init__(self, H, b, Ms, qs, rs):
        self.H, self.b = H, b
        self.Ms, self.qs, self.rs = (np.ascontiguousarray(a, dtype=float) for a in (Ms, qs, rs))
        self.m = len(rs)

    def f(self, z):
        return 0.5 * z @ self.H @ z + self.b @ z

    def g(self, z):
        # same arithmetic as the compiled loops, so feasibility decisions agree
        out = np.empty(self.m)
        _barrier._g(self.Ms, self.qs, self.rs, np.ascontiguousarray(z, dtype=float), out)
        return out

    def jac(self, z):
        return 2.0 * self.Ms @ z + self.qs


def _kkt(P: _Reduced, z, lam):
    g = P.g(z)
    stat = np.linalg.norm(P.H @ z + P.b + P.jac(z).T @ lam)
    return max(stat, max(g.max(initial=0.0), 0.0), float(np.abs(lam * g).max(initial=0.0)))


def _polish(P: _Reduced, z, lam, feas_tol):
    """Newton on the KKT system of the constraints the barrier left active."""
    g = P.g(z)
    act = np.flatnonzero(lam > -g)
    if act.size == 0:
        return z, np.zeros_like(lam)
    p = z.shape[0]
    la = lam[act].copy()
    Ms, qs, rs = P.Ms[act], P.qs[act], P.rs[act]
    for _ in range(6):
        J = 2.0 * Ms @ z + qs
        ga = np.einsum("i,jik,k->j", z, Ms, z) + qs @ z + rs
        r1 = P.H @ z + P.b + J.T @ la
        K = np.zeros((p + act.size, p + act.size))
        K[:p, :p] = P.H + np.einsum("j,jik->ik", 2.0 * la, Ms)
        K[:p, p:] = J.T
        K[p:, :p] = J
        try:
            step = np.linalg.solve(K, -np.concatenate([r1, ga]))
        except LinAlgError:
            return None
        z = z + step[:p]
        la = la + step[p:]
    if not np.all(np.isfinite(z)) or la.min() < -1e-12 * max(1.0, np.abs(la).max()):
        return None
    out = np.zeros_like(lam)
    out[act] = np.clip(la, 0.0, None)
    if P.g(z).max() > feas_tol:
        return None
    return z, out


def _refit_multipliers(P: _Reduced, z, lam):
    g = P.g(z)
    act = np.flatnonzero(lam > -g)
    out = np.zeros_like(lam)
    if act.size:
        J = P.jac(z)[act]
        out[act] = nnls(J.T, -(P.H @ z + P.b))[0]
    return out


class _History:
    """Preallocated merit log shared by the compiled phase-1 and centering loops."""

    def __init__(self, size):
        self.phase = np.zeros(size, dtype=np.int64)
        self.mu = np.zeros(size)
        self.merit = np.zeros(size)
        self.n = 0

    def rows(self):
        names = {_barrier.PHASE1: "phase1", _barrier.CENTER: "center"}
        return [
            (names[int(self.phase[i])], float(self.mu[i]), float(self.merit[i]))
            for i in range(self.n)
        ]


def _solve_reduced(P: _Reduced, z0, tol, feas_tol, max_iter):
    """Returns ``(z, lam, status, newton_steps, history)``."""
    try:
        z_unc = solve_unconstrained((P.H, P.b))
    except ValueError:
        z_unc = np.linalg.lstsq(P.H, -P.b, rcond=None)[0]
    hist = _History(max_iter + 1)
    if P.m == 0 or P.g(z_unc).max() <= 0:
        return z_unc, np.zeros(P.m), Status.OPTIMAL, 1, hist
    args = (P.Ms, P.qs, P.rs)
    used = 0
    z = z_unc if z0 is None else np.asarray(z0, dtype=float)
    if P.g(z).max() >= 0:
        z, ok, used, hist.n = _barrier.phase1(
            *args, z, max_iter, hist.phase, hist.mu, hist.merit, hist.n
        )
        if not ok:
            status = Status.INFEASIBLE if used < max_iter else Status.MAX_ITER
            return z, np.zeros(P.m), status, used, hist
    # the barrier schedule starts at mu = 1, so centre on a unit-scale copy of f
    s = float(np.abs(P.H).max())
    Hn, bn = P.H / s, P.b / s
    newton_tol = 1e-13 * max(1.0, np.abs(bn).max())
    z, mu, n_center, hist.n = _barrier.central_path(
        np.ascontiguousarray(Hn), bn, *args, z, tol / max(s, 1.0), max_iter - used, newton_tol,
        hist.phase, hist.mu, hist.merit, hist.n,
    )
    used += n_center
    lam = s * mu / np.maximum(-P.g(z), np.finfo(float).tiny)
    best = (_kkt(P, z, lam), z, lam)
    polished = _polish(P, z, lam, feas_tol)
    if polished is not None:
        res = _kkt(P, *polished)
        if res < best[0]:
            best = (res, *polished)
    refit = _refit_multipliers(P, z, lam)
    res = _kkt(P, z, refit)
    if res < best[0]:
        best = (res, z, refit)
    res, z, lam = best
    status = Status.OPTIMAL if res <= tol else Status.MAX_ITER
    return z, lam, status, used, hist


def solve(
    problem: QcqpProblem,
    tol: float = 1e-8,
    max_iter: int = 200,
    x0=None,
    feas_tol: float = 1e-8,
    debug_csv=None,
) -> QcqpSolution:
    """Solve ``problem`` to KKT tolerance ``tol``.

    ``x0`` is an optional starting point; it does not need to be feasible.
    ``max_iter`` caps the total number of Newton steps (phase 1 included).
    With ``debug_csv`` set, the barrier merit at each Newton step is written
    there.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = problem.n
    Ms, qs, rs = problem.quadratic_forms()

    if problem.eq_A is not None and problem.eq_A.size:
        A, beq = problem.eq_A, problem.eq_b
        xp = np.linalg.lstsq(A, beq, rcond=None)[0]
        if np.linalg.norm(A @ xp - beq) > 1e-9 * max(1.0, np.linalg.norm(beq)):
            return QcqpSolution(xp, np.zeros(len(rs)), np.inf, 0, Status.INFEASIBLE)
        N = null_space(A)
    else:
        A = None
        xp = np.zeros(n)
        N = np.eye(n)

    H, b = problem.H, problem.b
    # x = xp + N z
    Hz = N.T @ H @ N
    bz = N.T @ (H @ xp + b)
    Mz = np.einsum("ai,jab,bk->jik", N, Ms, N) if len(rs) else np.zeros((0, N.shape[1], N.shape[1]))
    qz = (2.0 * np.einsum("jab,b->ja", Ms, xp) + qs) @ N if len(rs) else np.zeros((0, N.shape[1]))
    rz = np.einsum("a,jab,b->j", xp, Ms, xp) + qs @ xp + rs if len(rs) else np.zeros(0)
    P = _Reduced(Hz, bz, Mz, qz, rz)
    z0 = None if x0 is None else N.T @ (np.asarray(x0, dtype=float) - xp)

    if N.shape[1] == 0:
        z = np.zeros(0)
        lam = np.zeros(len(rs))
        status = Status.OPTIMAL if (len(rs) == 0 or P.g(z).max() <= feas_tol) else Status.INFEASIBLE
        used, history = 1, []
    else:
        z, lam, status, used, hist = _solve_reduced(P, z0, tol, feas_tol, max_iter)
        history = hist.rows()
    x = xp + N @ z

    # certify in the original coordinates
    g = np.einsum("i,jik,k->j", x, Ms, x) + qs @ x + rs if len(rs) else np.zeros(0)
    J = 2.0 * Ms @ x + qs if len(rs) else np.zeros((0, n))
    r_stat = H @ x + b + J.T @ lam
    nu = None
    if A is not None:
        nu = np.linalg.lstsq(A.T, -r_stat, rcond=None)[0]
        r_stat = r_stat + A.T @ nu
    parts = [np.linalg.norm(r_stat)]
    if len(rs):
        parts += [max(g.max(), 0.0), float(np.abs(lam * g).max())]
    if A is not None:
        parts.append(float(np.abs(A @ x - problem.eq_b).max()))
    kkt = float(max(parts))
    if status is Status.OPTIMAL and kkt > tol:
        status = Status.MAX_ITER

    if debug_csv is not None:
        with open(debug_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "phase", "mu", "merit"])
            for i, (phase, mu, merit) in enumerate(history):
                w.writerow([i, phase, repr(mu), repr(merit)])

    return QcqpSolution(
        x=x,
        multipliers=lam,
        kkt_residual=kkt,
        iterations=used,
        status=status,
        objective=problem.objective(x),
        eq_multipliers=nu,
        history=history,
    )
