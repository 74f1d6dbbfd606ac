"""Linear state-space model with Student-t measurement noise, and a simulator.

The model is

    x_{k+1} = A x_k + w_k,     w_k ~ N(0, Q)
    y_k     = C x_k + v_k,     v_{k,i} ~ T(0, sigma_i, nu_i) independently

with x_1 ~ N(x0_mean, P0).  Data can also be generated from a contaminated
Gaussian measurement law while the filter keeps modelling Student-t noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

__all__ = [
    "StateSpaceModel",
    "MeasurementNoiseSpec",
    "Trajectory",
    "student_t_logpdf",
    "sample_measurement_noise",
    "simulate",
    "psd_factor",
]

_SYM_TOL = 1e-9


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    a.setflags(write=False)
    return a


def _as_vector(a, name: str, n: int | None = None) -> np.ndarray:
    a = np.array(a, dtype=float).reshape(-1)
    if n is not None and a.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {a.shape[0]}")
    a.setflags(write=False)
    return a


def _check_psd(m: np.ndarray, name: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if not np.allclose(m, m.T, atol=_SYM_TOL * scale, rtol=0.0):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(m).min() < -_SYM_TOL * scale:
        raise ValueError(f"{name} must be positive semidefinite")


def psd_factor(m: np.ndarray) -> np.ndarray:
    """Return L with L @ L.T == m for a symmetric PSD matrix (rank-deficient allowed)."""
    w, v = np.linalg.eigh(m)
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class StateSpaceModel:
    """System parameters (A, C, Q, sigma, nu, x0_mean, P0).

    ``P0`` is only required to be PSD here so that noiseless trajectories can
    be simulated; the filters regularise a singular prior before inverting it.
    """

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    sigma: np.ndarray
    nu: np.ndarray
    x0_mean: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        n_x = A.shape[0]
        if A.shape != (n_x, n_x):
            raise ValueError(f"A must be square, got shape {A.shape}")
        C = _as_matrix(self.C, "C")
        if C.shape[1] != n_x:
            raise ValueError(f"C must have {n_x} columns, got shape {C.shape}")
        n_y = C.shape[0]
        Q = _as_matrix(self.Q, "Q")
        P0 = _as_matrix(self.P0, "P0")
        for m, name in ((Q, "Q"), (P0, "P0")):
            if m.shape != (n_x, n_x):
                raise ValueError(f"{name} must be {n_x}x{n_x}, got shape {m.shape}")
            _check_psd(m, name)
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (n_y,)).copy()
        nu = np.broadcast_to(np.asarray(self.nu, dtype=float), (n_y,)).copy()
        if np.any(sigma <= 0) or np.any(nu <= 0):
            raise ValueError("sigma and nu must be strictly positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "P0", P0)
        object.__setattr__(self, "sigma", _as_vector(sigma, "sigma"))
        object.__setattr__(self, "nu", _as_vector(nu, "nu"))
        object.__setattr__(self, "x0_mean", _as_vector(self.x0_mean, "x0_mean", n_x))

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "C": self.C.tolist(),
            "Q": self.Q.tolist(),
            "sigma": self.sigma.tolist(),
            "nu": self.nu.tolist(),
            "x0_mean": self.x0_mean.tolist(),
            "P0": self.P0.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpaceModel":
        keys = ("A", "C", "Q", "sigma", "nu", "x0_mean", "P0")
        missing = [k for k in keys if k not in d]
        if missing:
            raise ValueError(f"model config is missing keys: {missing}")
        return cls(**{k: d[k] for k in keys})


@dataclass(frozen=True)
class MeasurementNoiseSpec:
    """Law used to *generate* measurement noise.

    ``kind`` is ``"student_t"`` (parameters ``sigma``, ``nu``) or
    ``"contaminated_gaussian"`` (``p_outlier``, ``var_nominal``,
    ``var_outlier``).  Parameters are per channel; scalars broadcast.
    Contamination is drawn independently per channel and per step.
    """

    kind: str
    sigma: np.ndarray | None = None
    nu: np.ndarray | None = None
    p_outlier: np.ndarray | None = None
    var_nominal: np.ndarray | None = None
    var_outlier: np.ndarray | None = None

    KINDS = ("student_t", "contaminated_gaussian")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "student_t":
            if self.sigma is None or self.nu is None:
                raise ValueError("student_t noise needs sigma and nu")
            sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
            nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
            if np.any(sigma <= 0) or np.any(nu <= 0):
                raise ValueError("sigma and nu must be strictly positive")
            object.__setattr__(self, "sigma", sigma)
            object.__setattr__(self, "nu", nu)
        else:
            if self.p_outlier is None or self.var_nominal is None or self.var_outlier is None:
                raise ValueError("contaminated_gaussian noise needs p_outlier, var_nominal, var_outlier")
            p = np.atleast_1d(np.asarray(self.p_outlier, dtype=float))
            v0 = np.atleast_1d(np.asarray(self.var_nominal, dtype=float))
            v1 = np.atleast_1d(np.asarray(self.var_outlier, dtype=float))
            if np.any(p < 0) or np.any(p > 1):
                raise ValueError("p_outlier must lie in [0, 1]")
            # zero variance is accepted so noiseless data can be generated
            if np.any(v0 < 0) or np.any(v1 < 0):
                raise ValueError("variances must be non-negative")
            object.__setattr__(self, "p_outlier", p)
            object.__setattr__(self, "var_nominal", v0)
            object.__setattr__(self, "var_outlier", v1)

    @classmethod
    def student_t(cls, sigma, nu) -> "MeasurementNoiseSpec":
        return cls("student_t", sigma=sigma, nu=nu)

    @classmethod
    def contaminated(cls, p_outlier, var_nominal, var_outlier) -> "MeasurementNoiseSpec":
        return cls(
            "contaminated_gaussian",
            p_outlier=p_outlier,
            var_nominal=var_nominal,
            var_outlier=var_outlier,
        )

    def variance(self, n_y: int) -> np.ndarray:
        """Per-channel variance of the noise law (inf for Student-t with nu <= 2)."""
        if self.kind == "student_t":
            sigma = np.broadcast_to(self.sigma, (n_y,))
            nu = np.broadcast_to(self.nu, (n_y,))
            with np.errstate(divide="ignore"):
                return np.where(nu > 2, nu * sigma**2 / np.where(nu > 2, nu - 2, 1.0), np.inf)
        p = np.broadcast_to(self.p_outlier, (n_y,))
        return (1 - p) * np.broadcast_to(self.var_nominal, (n_y,)) + p * np.broadcast_to(
            self.var_outlier, (n_y,)
        )

    def to_dict(self) -> dict:
        if self.kind == "student_t":
            return {"kind": self.kind, "sigma": self.sigma.tolist(), "nu": self.nu.tolist()}
        return {
            "kind": self.kind,
            "p_outlier": self.p_outlier.tolist(),
            "var_nominal": self.var_nominal.tolist(),
            "var_outlier": self.var_outlier.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementNoiseSpec":
        d = dict(d)
        kind = d.pop("kind", None)
        if kind is None:
            raise ValueError("noise config needs a 'kind'")
        unknown = set(d) - {"sigma", "nu", "p_outlier", "var_nominal", "var_outlier"}
        if unknown:
            raise ValueError(f"unknown noise config keys: {sorted(unknown)}")
        return cls(kind, **d)


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    measurements: np.ndarray
    outliers: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.states) != len(self.measurements):
            raise ValueError("states and measurements must have the same length")

    @property
    def T(self) -> int:
        return len(self.states)

    def to_csv(self, path) -> None:
        n_x = self.states.shape[1]
        n_y = self.measurements.shape[1]
        header = ["k"] + [f"x_{i + 1}" for i in range(n_x)] + [f"y_{i + 1}" for i in range(n_y)]
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(self.T):
                w.writerow([k + 1, *map(repr, self.states[k].tolist()), *map(repr, self.measurements[k].tolist())])


def student_t_logpdf(v, sigma, nu):
    """Log density of the univariate Student-t law T(0, sigma, nu).

    ``sigma`` is a scale parameter, so the normaliser carries the 1/sigma
    Jacobian.  Vectorised over all arguments.
    """
    sigma = np.asarray(sigma, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if np.any(sigma <= 0) or np.any(nu <= 0):
        raise ValueError("sigma and nu must be strictly positive")
    v = np.asarray(v, dtype=float)
    log_norm = gammaln((nu + 1) / 2) - gammaln(nu / 2) - 0.5 * np.log(np.pi * nu) - np.log(sigma)
    u = np.abs(v) / (sigma * np.sqrt(nu))
    big = u > 1e100
    with np.errstate(over="ignore", divide="ignore"):
        # log(1 + u^2) = 2 log u + log1p(u^-2) keeps huge residuals finite
        tail = np.where(big, 2 * np.log(np.where(big, u, 1.0)) + np.log1p(1 / np.where(big, u, 1.0) ** 2), np.log1p(u * u))
    out = log_norm - (nu + 1) / 2 * tail
    return out if out.ndim else float(out)


def sample_measurement_noise(noise: MeasurementNoiseSpec, rng: np.random.Generator, T: int, n_y: int):
    """Draw a (T, n_y) block of measurement noise.

    Returns ``(v, outlier_mask)``; the mask is all False for Student-t noise.
    Student-t draws use the normal / chi-square ratio representation.
    """
    if noise.kind == "student_t":
        sigma = np.broadcast_to(noise.sigma, (n_y,))
        nu = np.broadcast_to(noise.nu, (n_y,))
        z = rng.standard_normal((T, n_y))
        chi2 = rng.chisquare(nu, size=(T, n_y))
        return sigma * z / np.sqrt(chi2 / nu), np.zeros((T, n_y), dtype=bool)
    p = np.broadcast_to(noise.p_outlier, (n_y,))
    sd0 = np.sqrt(np.broadcast_to(noise.var_nominal, (n_y,)))
    sd1 = np.sqrt(np.broadcast_to(noise.var_outlier, (n_y,)))
    mask = rng.random((T, n_y)) < p
    z = rng.standard_normal((T, n_y))
    return np.where(mask, sd1, sd0) * z, mask


def simulate(model: StateSpaceModel, noise: MeasurementNoiseSpec, T: int, seed) -> Trajectory:
    """Simulate ``T`` steps of the model with measurement noise drawn from ``noise``.

    Bit-reproducible for a fixed ``seed`` (anything accepted by
    ``numpy.random.default_rng``).
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(seed)
    n_x, n_y = model.n_x, model.n_y
    LP = psd_factor(model.P0)
    LQ = psd_factor(model.Q)
    states = np.empty((T, n_x))
    states[0] = model.x0_mean + LP @ rng.standard_normal(n_x)
    w = rng.standard_normal((T - 1, n_x)) @ LQ.T
    for k in range(1, T):
        states[k] = model.A @ states[k - 1] + w[k - 1]
    v, mask = sample_measurement_noise(noise, rng, T, n_y)
    return Trajectory(states, states @ model.C.T + v, mask)
