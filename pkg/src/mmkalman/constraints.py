"""Scalar state constraints ``g(x) <= 0`` and their convex quadratic majorizers.

Supported kinds:

==============  ======================================  ==========
kind            g(x)                                    convex?
==============  ======================================  ==========
linear_eq       a^T x - b  (= 0)                        yes
linear_ineq     a^T x - b                               yes
convex_quad     x^T M x + q^T x + r,  M PSD             yes
annulus_outer   ||x_s||^2 - (rho + eps)^2               yes
annulus_inner   (rho - eps)^2 - ||x_s||^2               no
indef_quad      x^T D x,  D indefinite                  no
==============  ======================================  ==========

``x_s`` is the sub-vector picked out by ``indices``.  Non-convex kinds are
replaced inside the MM loop by

    g~(x; a) = g(a) + grad g(a)^T (x - a) + (G/2) ||x - a||_S^2

where G bounds the curvature of g and ``||.||_S`` is restricted to the
coordinates g depends on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FEAS_TOL",
    "Constraint",
    "LinearEq",
    "LinearIneq",
    "ConvexQuad",
    "AnnulusOuter",
    "AnnulusInner",
    "IndefQuad",
    "annulus",
    "eval_g",
    "grad_g",
    "majorize_g",
    "project_feasible",
    "constraint_from_dict",
]

FEAS_TOL = 1e-7


class Constraint:
    """Common interface; concrete kinds are frozen dataclasses below."""

    kind: str = ""
    convex: bool = True

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def curvature_bound(self) -> float:
        """G: Lipschitz constant of grad g."""
        raise NotImplementedError

    def support(self, n: int) -> np.ndarray:
        """Boolean mask of the coordinates g depends on."""
        return np.ones(n, dtype=bool)

    def to_quadratic(self, n: int) -> "ConvexQuad":
        """Exact ``x^T M x + q^T x + r`` form; only defined for convex kinds."""
        raise TypeError(f"{self.kind} is not a convex quadratic constraint")

    def project(self, x: np.ndarray) -> np.ndarray:
        """Euclidean projection of ``x`` onto ``{g <= 0}``."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def _check_dim(self, x, n: int | None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or (n is not None and x.shape[0] != n):
            raise ValueError(f"{self.kind}: expected a vector of length {n}, got shape {x.shape}")
        return x


@dataclass(frozen=True)
class LinearIneq(Constraint):
    a: np.ndarray
    b: float

    kind = "linear_ineq"

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", float(self.b))

    def value(self, x):
        return float(self.a @ self._check_dim(x, self.a.shape[0]) - self.b)

    def gradient(self, x):
        self._check_dim(x, self.a.shape[0])
        return self.a.copy()

    @property
    def curvature_bound(self):
        return 0.0

    def to_quadratic(self, n):
        return ConvexQuad(np.zeros((n, n)), self.a, -self.b)

    def project(self, x):
        x = self._check_dim(x, self.a.shape[0])
        viol = self.a @ x - self.b
        if viol <= 0:
            return x.copy()
        return x - viol / (self.a @ self.a) * self.a

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.tolist(), "b": self.b}


@dataclass(frozen=True)
class LinearEq(Constraint):
    """``a^T x = b``; ``value`` returns the signed residual."""

    a: np.ndarray
    b: float

    kind = "linear_eq"

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        object.__setattr__(self, "b", float(self.b))

    def value(self, x):
        return float(self.a @ self._check_dim(x, self.a.shape[0]) - self.b)

    def gradient(self, x):
        self._check_dim(x, self.a.shape[0])
        return self.a.copy()

    @property
    def curvature_bound(self):
        return 0.0

    def as_inequalities(self) -> tuple[LinearIneq, LinearIneq]:
        return LinearIneq(self.a, self.b), LinearIneq(-self.a, -self.b)

    def project(self, x):
        x = self._check_dim(x, self.a.shape[0])
        return x - (self.a @ x - self.b) / (self.a @ self.a) * self.a

    def to_dict(self):
        return {"kind": self.kind, "a": self.a.tolist(), "b": self.b}


@dataclass(frozen=True)
class ConvexQuad(Constraint):
    M: np.ndarray
    q: np.ndarray
    r: float
    _G: float = field(init=False, repr=False, compare=False)

    kind = "convex_quad"

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        M = 0.5 * (M + M.T)
        w = np.linalg.eigvalsh(M) if M.size else np.zeros(1)
        if w.min() < -1e-10 * max(1.0, np.abs(w).max()):
            raise ValueError("convex_quad needs a positive semidefinite M")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(-1))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "_G", 2.0 * float(np.abs(w).max()))

    def value(self, x):
        x = self._check_dim(x, self.q.shape[0])
        return float(x @ self.M @ x + self.q @ x + self.r)

    def gradient(self, x):
        x = self._check_dim(x, self.q.shape[0])
        return 2.0 * self.M @ x + self.q

    @property
    def curvature_bound(self):
        return self._G

    def to_quadratic(self, n):
        if self.q.shape[0] != n:
            raise ValueError(f"convex_quad has dimension {self.q.shape[0]}, expected {n}")
        return self

    def project(self, x):
        x = self._check_dim(x, self.q.shape[0])
        if self.value(x) <= 0:
            return x.copy()
        from .qcqp import QcqpProblem, Status, solve

        n = x.shape[0]
        sol = solve(QcqpProblem(2.0 * np.eye(n), -2.0 * x, float(x @ x), [self]), x0=x)
        if sol.status is Status.INFEASIBLE:
            raise ValueError("convex_quad constraint has an empty feasible set")
        return sol.x

    def to_dict(self):
        return {"kind": self.kind, "M": self.M.tolist(), "q": self.q.tolist(), "r": self.r}


def _subset(indices, x) -> np.ndarray:
    return x[list(indices)]


@dataclass(frozen=True)
class _Annulus(Constraint):
    radius: float
    eps: float
    indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "eps", float(self.eps))
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if not self.radius > self.eps > 0:
            raise ValueError("annulus needs radius > eps > 0")
        if len(self.indices) == 0 or len(set(self.indices)) != len(self.indices) or min(self.indices) < 0:
            raise ValueError("annulus indices must be distinct non-negative integers")

    def _checked(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or max(self.indices) >= x.shape[0]:
            raise ValueError(f"{self.kind}: index {max(self.indices)} out of range for shape {x.shape}")
        return x

    def support(self, n):
        mask = np.zeros(n, dtype=bool)
        mask[list(self.indices)] = True
        return mask

    @property
    def curvature_bound(self):
        return 2.0

    def to_dict(self):
        return {"kind": self.kind, "radius": self.radius, "eps": self.eps, "indices": list(self.indices)}

    def _radial(self, x, target):
        out = x.copy()
        xs = _subset(self.indices, x)
        nrm = np.linalg.norm(xs)
        if nrm == 0.0:
            # centre of symmetry: break the tie along the first constrained axis
            xs = np.zeros_like(xs)
            xs[0] = 1e-9
            nrm = 1e-9
        out[list(self.indices)] = xs * (target / nrm)
        return out


@dataclass(frozen=True)
class AnnulusOuter(_Annulus):
    kind = "annulus_outer"

    def value(self, x):
        xs = _subset(self.indices, self._checked(x))
        return float(xs @ xs - (self.radius + self.eps) ** 2)

    def gradient(self, x):
        x = self._checked(x)
        g = np.zeros_like(x)
        g[list(self.indices)] = 2.0 * _subset(self.indices, x)
        return g

    def to_quadratic(self, n):
        M = np.diag(self.support(n).astype(float))
        return ConvexQuad(M, np.zeros(n), -((self.radius + self.eps) ** 2))

    def project(self, x):
        x = self._checked(x)
        if self.value(x) <= 0:
            return x.copy()
        return self._radial(x, self.radius + self.eps)


@dataclass(frozen=True)
class AnnulusInner(_Annulus):
    kind = "annulus_inner"
    convex = False

    def value(self, x):
        xs = _subset(self.indices, self._checked(x))
        return float((self.radius - self.eps) ** 2 - xs @ xs)

    def gradient(self, x):
        x = self._checked(x)
        g = np.zeros_like(x)
        g[list(self.indices)] = -2.0 * _subset(self.indices, x)
        return g

    def project(self, x):
        x = self._checked(x)
        if self.value(x) <= 0:
            return x.copy()
        return self._radial(x, self.radius - self.eps)


@dataclass(frozen=True)
class IndefQuad(Constraint):
    """``x^T D x <= 0`` with a symmetric (typically indefinite) ``D``."""

    D: np.ndarray
    _G: float = field(init=False, repr=False, compare=False)

    kind = "indef_quad"
    convex = False

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        D = 0.5 * (D + D.T)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "_G", 2.0 * float(np.abs(np.linalg.eigvalsh(D)).max()))

    def value(self, x):
        x = self._check_dim(x, self.D.shape[0])
        return float(x @ self.D @ x)

    def gradient(self, x):
        return 2.0 * self.D @ self._check_dim(x, self.D.shape[0])

    @property
    def curvature_bound(self):
        return self._G

    def project(self, x):
        """Projection onto the cone ``x^T D x <= 0``.

        The minimiser is ``(I + lam D)^{-1} x`` for the root ``lam`` of the
        (monotone) secular function on ``[0, 1/|d_min|)``.
        """
        x = self._check_dim(x, self.D.shape[0])
        if self.value(x) <= 0:
            return x.copy()
        d, V = np.linalg.eigh(self.D)
        z = V.T @ x
        if d[0] >= 0 or np.all(z[d < 0] == 0):
            # no negative direction to trade against: the origin is the closest feasible point we can certify
            return np.zeros_like(x)
        hi = 1.0 / -d[0]

        def phi(lam):
            return float(np.sum(d * (z / (1 + lam * d)) ** 2))

        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if phi(mid) > 0:
                lo = mid
            else:
                hi = mid
        return V @ (z / (1 + hi * d))

    def to_dict(self):
        return {"kind": self.kind, "D": self.D.tolist()}


def annulus(radius: float, eps: float, indices=(0, 1)) -> list[Constraint]:
    """The band ``(radius-eps)^2 <= ||x_s||^2 <= (radius+eps)^2`` as two constraints."""
    return [AnnulusOuter(radius, eps, indices), AnnulusInner(radius, eps, indices)]


def eval_g(c: Constraint, x) -> float:
    return c.value(x)


def grad_g(c: Constraint, x) -> np.ndarray:
    return c.gradient(x)


def majorize_g(c: Constraint, anchor) -> Constraint:
    """Convex quadratic upper bound of ``c`` tangent at ``anchor``.

    Convex kinds are returned unchanged.  Otherwise the result matches g and
    grad g at ``anchor`` and lies above g everywhere.
    """
    if c.convex:
        return c
    anchor = np.asarray(anchor, dtype=float)
    n = anchor.shape[0]
    G = c.curvature_bound
    S = c.support(n).astype(float)
    g0 = c.value(anchor)
    dg = c.gradient(anchor)
    M = 0.5 * G * np.diag(S)
    q = dg - G * S * anchor
    r = g0 - dg @ anchor + 0.5 * G * float(np.sum(S * anchor * anchor))
    return ConvexQuad(M, q, r)


def project_feasible(constraints, x, sweeps: int = 20) -> np.ndarray:
    """Move ``x`` into the intersection by cyclic projections.

    Exact for a single constraint; for several it stops at the first sweep
    that leaves every constraint satisfied to ``FEAS_TOL``.
    """
    x = np.asarray(x, dtype=float).copy()
    for _ in range(sweeps):
        if all(c.value(x) <= FEAS_TOL for c in constraints):
            return x
        for c in constraints:
            if c.value(x) > 0:
                x = c.project(x)
    return x


_KINDS = {
    "linear_eq": LinearEq,
    "linear_ineq": LinearIneq,
    "convex_quad": ConvexQuad,
    "annulus_outer": AnnulusOuter,
    "annulus_inner": AnnulusInner,
    "indef_quad": IndefQuad,
}


def constraint_from_dict(d: dict) -> Constraint:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"unknown constraint kind {kind!r}; expected one of {sorted(_KINDS)}")
    try:
        return _KINDS[kind](**d)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind}: {exc}") from None
