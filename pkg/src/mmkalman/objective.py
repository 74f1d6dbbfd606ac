"""Per-step MAP objective for Student-t measurements and its quadratic majorizers.

For a Gaussian prior N(m, P) and one measurement vector y the negative
log-posterior (times two, constants dropped) is

    F(x) = (x - m)^T P^{-1} (x - m) + sum_i (1 + nu_i) log(1 + (C_i x - y_i)^2 / (nu_i sigma_i^2))

The first term is a convex quadratic; the sum (``F_ncvx``) is not convex.
Two quadratic surrogates are provided, both tangent to F at an anchor and
above it everywhere:

* ``log``: linearise the concave ``log`` around the anchor, which turns the
  sum into a reweighted least-squares term with weights ``m_i``;
* ``smooth``: the descent-lemma bound with the global Lipschitz constant of
  ``grad F_ncvx``.

Quadratics are stored as ``0.5 x^T H x + b^T x + c`` so the minimiser is
``-H^{-1} b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MapObjective",
    "QuadraticSurrogate",
    "eval_F",
    "eval_F_ncvx",
    "grad_F",
    "grad_F_ncvx",
    "mm_weights",
    "lipschitz_L",
    "build_surrogate_log",
    "build_surrogate_smooth",
    "build_surrogate",
]

# Condition number above which a prior covariance is ridged before inversion.
MAX_PRIOR_COND = 1e12


def regularized_inverse(P: np.ndarray) -> np.ndarray:
    """Symmetric inverse of a covariance, adding a small ridge if it is near singular."""
    P = 0.5 * (P + P.T)
    w = np.linalg.eigvalsh(P)
    if w[0] <= 0 or w[-1] / w[0] > MAX_PRIOR_COND:
        n = P.shape[0]
        ridge = 1e-10 * max(np.trace(P), 1e-300) / n
        P = P + ridge * np.eye(n)
    Pinv = np.linalg.inv(P)
    return 0.5 * (Pinv + Pinv.T)


@dataclass(frozen=True)
class MapObjective:
    prior_mean: np.ndarray
    prior_precision: np.ndarray
    C: np.ndarray
    y: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray

    @classmethod
    def from_prior(cls, mean, cov, C, y, sigma, nu) -> "MapObjective":
        """Build the objective from a prior covariance (inverted here)."""
        return cls(
            np.asarray(mean, dtype=float),
            regularized_inverse(np.asarray(cov, dtype=float)),
            np.asarray(C, dtype=float),
            np.asarray(y, dtype=float),
            np.asarray(sigma, dtype=float),
            np.asarray(nu, dtype=float),
        )

    @property
    def n_x(self) -> int:
        return self.prior_mean.shape[0]

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_x,):
            raise ValueError(f"expected a vector of length {self.n_x}, got shape {x.shape}")
        return x

    @property
    def scale2(self) -> np.ndarray:
        """nu_i * sigma_i^2 per channel."""
        return self.nu * self.sigma**2


@dataclass(frozen=True)
class QuadraticSurrogate:
    """``0.5 x^T H x + b^T x + c``, built at ``anchor``."""

    H: np.ndarray
    b: np.ndarray
    c: float
    anchor: np.ndarray

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.b @ x + self.c)

    def gradient(self, x) -> np.ndarray:
        return self.H @ np.asarray(x, dtype=float) + self.b

    def scaled(self, alpha: float) -> "QuadraticSurrogate":
        return QuadraticSurrogate(alpha * self.H, alpha * self.b, alpha * self.c, self.anchor)


def eval_F_ncvx(obj: MapObjective, x) -> float:
    x = obj._check(x)
    r = obj.C @ x - obj.y
    return float(np.sum((1 + obj.nu) * np.log1p(r * r / obj.scale2)))


def eval_F(obj: MapObjective, x) -> float:
    x = obj._check(x)
    d = x - obj.prior_mean
    return float(d @ obj.prior_precision @ d) + eval_F_ncvx(obj, x)


def mm_weights(obj: MapObjective, x) -> np.ndarray:
    """Reweighting coefficients ``m_i = (1 + nu_i) / (nu_i sigma_i^2 + r_i^2)`` at ``x``."""
    r = obj.C @ obj._check(x) - obj.y
    return (1 + obj.nu) / (obj.scale2 + r * r)


def grad_F_ncvx(obj: MapObjective, x) -> np.ndarray:
    x = obj._check(x)
    r = obj.C @ x - obj.y
    m = (1 + obj.nu) / (obj.scale2 + r * r)
    return 2.0 * obj.C.T @ (m * r)


def grad_F(obj: MapObjective, x) -> np.ndarray:
    x = obj._check(x)
    return 2.0 * obj.prior_precision @ (x - obj.prior_mean) + grad_F_ncvx(obj, x)


def lipschitz_L(obj: MapObjective) -> float:
    """Lipschitz constant of ``grad F_ncvx``: ``2 sum_i (nu_i+1)/(nu_i sigma_i^2) ||C_i||^2``.

    Depends on C, sigma and nu only.
    """
    row_norm2 = np.sum(obj.C * obj.C, axis=1)
    return float(2.0 * np.sum((obj.nu + 1) / obj.scale2 * row_norm2))


def _anchor_constant(obj, H, b, anchor) -> float:
    # c restores the dropped constants so the surrogate touches F at the anchor
    return eval_F(obj, anchor) - float(0.5 * anchor @ H @ anchor + b @ anchor)


def build_surrogate_log(obj: MapObjective, anchor) -> QuadraticSurrogate:
    """Majorizer from the tangent bound on ``log``.

    ``(x-m)^T P^{-1} (x-m) + sum_i m_i (C_i x - y_i)^2 + c`` with the weights
    ``m_i`` frozen at ``anchor``.
    """
    anchor = obj._check(anchor)
    w = mm_weights(obj, anchor)
    W = obj.prior_precision
    H = 2.0 * (W + (obj.C.T * w) @ obj.C)
    b = -2.0 * (W @ obj.prior_mean + obj.C.T @ (w * obj.y))
    return QuadraticSurrogate(H, b, _anchor_constant(obj, H, b, anchor), anchor.copy())


def build_surrogate_smooth(obj: MapObjective, anchor, L: float | None = None) -> QuadraticSurrogate:
    """Descent-lemma majorizer: exact prior term plus ``F_ncvx`` linearised with ``L/2`` curvature."""
    anchor = obj._check(anchor)
    if L is None:
        L = lipschitz_L(obj)
    W = obj.prior_precision
    H = 2.0 * W + L * np.eye(obj.n_x)
    b = -2.0 * W @ obj.prior_mean + grad_F_ncvx(obj, anchor) - L * anchor
    return QuadraticSurrogate(H, b, _anchor_constant(obj, H, b, anchor), anchor.copy())


def build_surrogate(obj: MapObjective, anchor, kind: str) -> QuadraticSurrogate:
    if kind == "log":
        return build_surrogate_log(obj, anchor)
    if kind == "smooth":
        return build_surrogate_smooth(obj, anchor)
    raise ValueError(f"unknown surrogate {kind!r}; expected 'log' or 'smooth'")

