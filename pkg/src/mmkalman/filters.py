"""Student-t MM filter and baseline filters.

Each step of :func:`run_filter`:

1. propagate the Gaussian belief through the dynamics (skipped at k = 1,
   where ``N(x0_mean, P0)`` already is the prior of ``x_1``);
2. minimise the per-step MAP objective by MM, solving a QCQP (or a linear
   system when there are no constraints) per iteration;
3. turn the final residuals into an equivalent diagonal Gaussian noise
   covariance ``R_k``;
4. apply the Kalman covariance update with ``R_k``.

Baselines: a Kalman filter with fixed ``R``, a projection filter that maps
the unconstrained MM estimates onto the constraint set in the posterior
metric, and a bootstrap particle filter with Student-t weights.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .constraints import Constraint, LinearEq, annulus, majorize_g, project_feasible
from .model import StateSpaceModel, psd_factor, student_t_logpdf
from .objective import (
    MapObjective,
    QuadraticSurrogate,
    build_surrogate,
    eval_F,
    regularized_inverse,
)
from .qcqp import QcqpProblem, Status, solve, solve_unconstrained

__all__ = [
    "GaussianBelief",
    "FilterConfig",
    "FilterTrace",
    "FilterStepError",
    "MMResult",
    "predict",
    "mm_update",
    "adaptive_R",
    "covariance_update",
    "run_filter",
    "kalman_baseline",
    "projection_baseline",
    "particle_filter_oracle",
    "warmup",
]

SCHEMA_VERSION = 1


class FilterStepError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))


@dataclass(frozen=True)
class FilterConfig:
    """Settings of the MM filter.

    ``surrogate`` is ``"log"`` or ``"smooth"``.  Constraints are only enforced
    when ``constrained`` is true; they are still evaluated for the trace
    otherwise.  ``r_mode`` selects how ``R_k`` is formed: ``"log_match"``
    matches the log term at the estimate, ``"inverse_weight"`` uses the final
    MM weights ``1 / m_i``.
    """

    surrogate: str = "log"
    constrained: bool = False
    constraints: tuple = ()
    mm_tol: float = 1e-6
    mm_max_iter: int = 50
    qcqp_tol: float = 1e-8
    qcqp_max_iter: int = 200
    r_mode: str = "log_match"
    use_kernel: bool = True

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.surrogate not in ("log", "smooth"):
            raise ValueError(f"surrogate must be 'log' or 'smooth', got {self.surrogate!r}")
        if self.r_mode not in ("log_match", "inverse_weight"):
            raise ValueError(f"r_mode must be 'log_match' or 'inverse_weight', got {self.r_mode!r}")
        if not self.mm_tol > 0:
            raise ValueError("mm_tol must be positive")
        if self.mm_max_iter < 1:
            raise ValueError("mm_max_iter must be at least 1")
        if self.constrained and not self.constraints:
            raise ValueError("constrained=True needs at least one constraint")

    @property
    def active_constraints(self) -> tuple:
        return self.constraints if self.constrained else ()


@dataclass
class FilterTrace:
    """Per-step record of a filter run (all arrays have leading length T)."""

    means: np.ndarray
    covs: np.ndarray
    mm_iters: np.ndarray
    F_final: np.ndarray
    R_diag: np.ndarray
    wall_ns: np.ndarray
    g_resid_max: np.ndarray
    constraint_active: np.ndarray
    descent_violations: np.ndarray
    rejected_steps: np.ndarray
    F_history: list = field(default_factory=list, repr=False)

    @classmethod
    def empty(cls, T: int, n_x: int, n_y: int) -> "FilterTrace":
        return cls(
            means=np.empty((T, n_x)),
            covs=np.empty((T, n_x, n_x)),
            mm_iters=np.zeros(T, dtype=np.int64),
            F_final=np.full(T, np.nan),
            R_diag=np.full((T, n_y), np.nan),
            wall_ns=np.zeros(T, dtype=np.int64),
            g_resid_max=np.full(T, np.nan),
            constraint_active=np.zeros(T, dtype=bool),
            descent_violations=np.zeros(T, dtype=np.int64),
            rejected_steps=np.zeros(T, dtype=np.int64),
            F_history=[None] * T,
        )

    def __len__(self) -> int:
        return len(self.means)

    @property
    def total_seconds(self) -> float:
        return float(self.wall_ns.sum()) * 1e-9

    def to_csv(self, path) -> None:
        T, n_x = self.means.shape
        n_y = self.R_diag.shape[1]
        header = (
            ["k"]
            + [f"xhat_{i + 1}" for i in range(n_x)]
            + [f"P_diag_{i + 1}" for i in range(n_x)]
            + ["mm_iters", "F_final"]
            + [f"r_{i + 1}" for i in range(n_y)]
            + ["wall_ns", "g_resid_max"]
        )
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version={SCHEMA_VERSION}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(T):
                w.writerow(
                    [k + 1]
                    + [repr(v) for v in self.means[k].tolist()]
                    + [repr(v) for v in np.diag(self.covs[k]).tolist()]
                    + [int(self.mm_iters[k]), repr(float(self.F_final[k]))]
                    + [repr(v) for v in self.R_diag[k].tolist()]
                    + [int(self.wall_ns[k]), repr(float(self.g_resid_max[k]))]
                )


@dataclass
class MMResult:
    x: np.ndarray
    iterations: int
    F_history: list
    rejected: int = 0
    violations: int = 0
    active: bool = False


def predict(model: StateSpaceModel, post: GaussianBelief) -> GaussianBelief:
    """Time update ``(A m, A P A^T + Q)``."""
    A = model.A
    return GaussianBelief(A @ post.mean, A @ post.cov @ A.T + model.Q)


def _split_constraints(constraints: Sequence[Constraint]):
    eqs = [c for c in constraints if isinstance(c, LinearEq)]
    ineqs = [c for c in constraints if not isinstance(c, LinearEq)]
    if eqs:
        eq_A = np.array([c.a for c in eqs])
        eq_b = np.array([c.b for c in eqs])
    else:
        eq_A = eq_b = None
    return ineqs, eq_A, eq_b


def _constraint_residual(constraints, x) -> float:
    if not constraints:
        return float("nan")
    return max(abs(c.value(x)) if isinstance(c, LinearEq) else c.value(x) for c in constraints)


def _mm_minimize(F, build, x0, constraints, cfg: FilterConfig) -> MMResult:
    """Generic MM loop: ``build(anchor)`` returns a QuadraticSurrogate of ``F``."""
    ineqs, eq_A, eq_b = _split_constraints(constraints)
    x = np.asarray(x0, dtype=float)
    Fx = F(x)
    hist = [Fx]
    res = MMResult(x, 0, hist)
    for _ in range(cfg.mm_max_iter):
        surr = build(x)
        if constraints:
            majorized = [majorize_g(c, x) for c in ineqs]
            prob = QcqpProblem.from_surrogate(surr, majorized, eq_A=eq_A, eq_b=eq_b)
            sol = solve(prob, tol=cfg.qcqp_tol, max_iter=cfg.qcqp_max_iter, x0=x)
            if sol.status is Status.INFEASIBLE:
                raise FilterStepError(-1, "majorized QCQP subproblem is infeasible")
            xn = sol.x
            active = bool(np.any(sol.multipliers > 0))
        else:
            xn = solve_unconstrained(surr)
            active = False
        res.iterations += 1
        Fn = F(xn)
        if Fn > Fx:
            # inexact subproblem solve near convergence: keep the better point
            res.rejected += 1
            if Fn > Fx + 1e-12:
                res.violations += 1
            break
        step = float(np.max(np.abs(xn - x)))
        x, Fx = xn, Fn
        res.active = active
        hist.append(Fx)
        if step <= cfg.mm_tol:
            break
    res.x = x
    return res


def mm_update(model: StateSpaceModel, prior: GaussianBelief, y, cfg: FilterConfig) -> MMResult:
    """MAP estimate of the current state by majorization-minimization.

    Starts at the prior mean (moved onto the feasible set first when it
    violates a constraint).  Stops when the sup-norm step falls below
    ``cfg.mm_tol`` or after ``cfg.mm_max_iter`` subproblems.
    """
    obj = MapObjective.from_prior(prior.mean, prior.cov, model.C, y, model.sigma, model.nu)
    constraints = cfg.active_constraints
    x0 = prior.mean
    if constraints and any(
        (abs(c.value(x0)) if isinstance(c, LinearEq) else c.value(x0)) > 0 for c in constraints
    ):
        x0 = project_feasible(constraints, x0)
    return _mm_minimize(
        lambda x: eval_F(obj, x),
        lambda a: build_surrogate(obj, a, cfg.surrogate),
        x0,
        constraints,
        cfg,
    )


def adaptive_R(model: StateSpaceModel, x_hat, y, r_mode: str = "log_match") -> np.ndarray:
    """Diagonal of the equivalent Gaussian measurement covariance at ``x_hat``.

    ``r_i = w_i^2 / ((1 + nu_i) log(1 + w_i^2 / (nu_i sigma_i^2)))`` with
    ``w = C x_hat - y``; for ``|w_i| < 1e-8 sigma_i`` the limit
    ``nu_i sigma_i^2 / (1 + nu_i)`` is returned.
    """
    w = model.C @ np.asarray(x_hat, dtype=float) - np.asarray(y, dtype=float)
    nu = model.nu
    s2nu = nu * model.sigma**2
    if r_mode == "inverse_weight":
        return (s2nu + w * w) / (1 + nu)
    u = w * w / s2nu
    tiny = u < 1e-5
    safe = np.where(tiny, 1.0, u)
    # u / log1p(u) by its series where the direct ratio rounds non-monotonically
    ratio = np.where(tiny, 1.0 + u * (0.5 - u * (1.0 / 12.0 - u / 24.0)), safe / np.log1p(safe))
    return np.where(np.abs(w) < 1e-8 * model.sigma, 1.0, ratio) * s2nu / (1 + nu)


def covariance_update(prior: GaussianBelief, C, R) -> GaussianBelief:
    """Kalman covariance update ``P - K C P`` with ``K = P C^T (C P C^T + R)^{-1}``.

    ``R`` may be a full matrix or the vector of its diagonal.  The returned
    mean is the prior mean; callers replace it with their own estimate.
    """
    C = np.asarray(C, dtype=float)
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = np.diag(R)
    P = prior.cov
    PCt = P @ C.T
    S = C @ PCt + R
    try:
        K = np.linalg.solve(S, PCt.T).T
    except np.linalg.LinAlgError as exc:
        raise ValueError("innovation covariance is singular") from exc
    return GaussianBelief(prior.mean, P - K @ C @ P)


def _kernel_args(model):
    s2nu = model.nu * model.sigma**2
    row_norm2 = np.sum(model.C * model.C, axis=1)
    L = float(2.0 * np.sum((model.nu + 1) / s2nu * row_norm2))
    return (
        np.ascontiguousarray(model.A),
        np.ascontiguousarray(model.C),
        np.ascontiguousarray(model.Q),
        s2nu,
        np.ascontiguousarray(model.nu),
        model.sigma**2,
        L,
    )


def _run_kernel(model, cfg, Y, constraints_for_trace) -> FilterTrace:
    T = len(Y)
    trace = FilterTrace.empty(T, model.n_x, model.n_y)
    surrogate = _kernels.LOG if cfg.surrogate == "log" else _kernels.SMOOTH
    r_mode = _kernels.R_LOG_MATCH if cfg.r_mode == "log_match" else _kernels.R_INVERSE_WEIGHT
    F_hist = np.empty((T, cfg.mm_max_iter + 1))
    n_hist = np.zeros(T, dtype=np.int64)
    _kernels.tfmm_run(
        *_kernel_args(model),
        np.array(model.x0_mean, dtype=float),
        np.array(model.P0, dtype=float),
        np.ascontiguousarray(Y),
        surrogate,
        r_mode,
        cfg.mm_tol,
        cfg.mm_max_iter,
        trace.means,
        trace.covs,
        trace.mm_iters,
        trace.rejected_steps,
        trace.descent_violations,
        trace.F_final,
        trace.R_diag,
        F_hist,
        n_hist,
        trace.wall_ns,
    )
    trace.F_history = [F_hist[k, : n_hist[k]].copy() for k in range(T)]
    if constraints_for_trace:
        trace.g_resid_max[:] = [_constraint_residual(constraints_for_trace, x) for x in trace.means]
    return trace


def run_filter(model: StateSpaceModel, cfg: FilterConfig, measurements) -> FilterTrace:
    """Run the Student-t MM filter over ``measurements`` (shape ``(T, n_y)``)."""
    Y = np.asarray(measurements, dtype=float)
    if Y.ndim != 2 or Y.shape[1] != model.n_y or len(Y) < 1:
        raise ValueError(f"measurements must have shape (T >= 1, {model.n_y}), got {Y.shape}")
    if cfg.use_kernel and not cfg.active_constraints:
        return _run_kernel(model, cfg, Y, cfg.constraints)

    T = len(Y)
    trace = FilterTrace.empty(T, model.n_x, model.n_y)
    belief = GaussianBelief(model.x0_mean, model.P0)
    for k in range(T):
        t0 = time.perf_counter_ns()
        prior = predict(model, belief) if k > 0 else belief
        try:
            res = mm_update(model, prior, Y[k], cfg)
        except FilterStepError as exc:
            raise FilterStepError(k, str(exc).split(": ", 1)[-1]) from None
        R = adaptive_R(model, res.x, Y[k], cfg.r_mode)
        upd = covariance_update(prior, model.C, R)
        belief = GaussianBelief(res.x, upd.cov)
        trace.wall_ns[k] = time.perf_counter_ns() - t0
        trace.means[k] = res.x
        trace.covs[k] = belief.cov
        trace.mm_iters[k] = res.iterations
        trace.F_final[k] = res.F_history[-1]
        trace.R_diag[k] = R
        trace.rejected_steps[k] = res.rejected
        trace.descent_violations[k] = res.violations
        trace.constraint_active[k] = res.active
        trace.F_history[k] = np.array(res.F_history)
        trace.g_resid_max[k] = _constraint_residual(cfg.constraints, res.x)
    return trace


def kalman_baseline(model: StateSpaceModel, measurements, R=None) -> FilterTrace:
    """Textbook Kalman filter with fixed diagonal (or full) measurement covariance.

    ``R`` defaults to ``diag(sigma^2)``, the Gaussian reading of the model.
    """
    Y = np.asarray(measurements, dtype=float)
    if R is None:
        R = model.sigma**2
    R = np.asarray(R, dtype=float)
    R = np.diag(np.broadcast_to(R, (model.n_y,))) if R.ndim <= 1 else R
    T = len(Y)
    trace = FilterTrace.empty(T, model.n_x, model.n_y)
    A, C, Q = model.A, model.C, model.Q
    x = np.array(model.x0_mean, dtype=float)
    P = np.array(model.P0, dtype=float)
    Rd = np.diag(R)
    for k in range(T):
        t0 = time.perf_counter_ns()
        if k > 0:
            x = A @ x
            P = A @ P @ A.T + Q
        PCt = P @ C.T
        S = C @ PCt + R
        try:
            K = np.linalg.solve(S, PCt.T).T
        except np.linalg.LinAlgError:
            raise FilterStepError(k, "innovation covariance is singular") from None
        x = x + K @ (Y[k] - C @ x)
        P = P - K @ C @ P
        P = 0.5 * (P + P.T)
        trace.wall_ns[k] = time.perf_counter_ns() - t0
        trace.means[k] = x
        trace.covs[k] = P
        trace.R_diag[k] = Rd
    return trace


def projection_baseline(
    model: StateSpaceModel,
    constraints: Sequence[Constraint],
    measurements,
    cfg: FilterConfig | None = None,
    unconstrained: FilterTrace | None = None,
) -> FilterTrace:
    """Project unconstrained MM estimates onto the constraint set.

    Per step solves ``min (xhat - x)^T P^{-1} (xhat - x)`` subject to the
    constraints, with ``(xhat, P)`` the unconstrained posterior.  The
    projection is not fed back into the recursion.
    """
    constraints = tuple(constraints)
    if cfg is None:
        cfg = FilterConfig()
    if unconstrained is None:
        base = FilterConfig(
            surrogate=cfg.surrogate,
            mm_tol=cfg.mm_tol,
            mm_max_iter=cfg.mm_max_iter,
            r_mode=cfg.r_mode,
            use_kernel=cfg.use_kernel,
        )
        unconstrained = run_filter(model, base, measurements)
    proj_cfg = FilterConfig(
        constrained=True,
        constraints=constraints,
        mm_tol=cfg.mm_tol,
        mm_max_iter=cfg.mm_max_iter,
        qcqp_tol=cfg.qcqp_tol,
        qcqp_max_iter=cfg.qcqp_max_iter,
    )
    T = len(unconstrained)
    trace = FilterTrace.empty(T, model.n_x, model.n_y)
    trace.covs[:] = unconstrained.covs
    trace.R_diag[:] = unconstrained.R_diag
    for k in range(T):
        t0 = time.perf_counter_ns()
        xhat = unconstrained.means[k]
        W = regularized_inverse(unconstrained.covs[k])
        H = 2.0 * W
        b = -2.0 * W @ xhat
        c = float(xhat @ W @ xhat)
        quad = QuadraticSurrogate(H, b, c, xhat)
        try:
            res = _mm_minimize(
                # centred form: the expanded quadratic cancels badly far from the origin
                lambda x, xhat=xhat, W=W: float((x - xhat) @ W @ (x - xhat)),
                lambda a: quad,
                project_feasible(constraints, xhat),
                constraints,
                proj_cfg,
            )
        except FilterStepError as exc:
            raise FilterStepError(k, str(exc).split(": ", 1)[-1]) from None
        trace.wall_ns[k] = unconstrained.wall_ns[k] + (time.perf_counter_ns() - t0)
        trace.means[k] = res.x
        trace.mm_iters[k] = res.iterations
        trace.F_final[k] = res.F_history[-1]
        trace.rejected_steps[k] = res.rejected
        trace.descent_violations[k] = res.violations
        trace.constraint_active[k] = res.active
        trace.F_history[k] = np.array(res.F_history)
        trace.g_resid_max[k] = _constraint_residual(constraints, res.x)
    return trace


def _systematic_resample(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(w)
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions)


def particle_filter_oracle(
    model: StateSpaceModel, measurements, n_particles: int = 10_000, seed=0
) -> FilterTrace:
    """Bootstrap particle filter with Student-t likelihood and systematic resampling.

    Reports the weighted particle mean and covariance before resampling.
    """
    if n_particles < 100:
        raise ValueError("n_particles must be at least 100")
    Y = np.asarray(measurements, dtype=float)
    rng = np.random.default_rng(seed)
    T = len(Y)
    trace = FilterTrace.empty(T, model.n_x, model.n_y)
    LQ_T = psd_factor(model.Q).T
    AT = model.A.T
    C = model.C
    sigma, nu = model.sigma, model.nu
    particles = model.x0_mean + rng.standard_normal((n_particles, model.n_x)) @ psd_factor(model.P0).T
    for k in range(T):
        t0 = time.perf_counter_ns()
        if k > 0:
            particles = particles @ AT + rng.standard_normal(particles.shape) @ LQ_T
        logw = student_t_logpdf(Y[k] - particles @ C.T, sigma, nu).sum(axis=1)
        lse = logsumexp(logw)
        if not np.isfinite(lse):
            raise FilterStepError(k, "particle weights collapsed")
        w = np.exp(logw - lse)
        mean = w @ particles
        dev = particles - mean
        cov = (dev * w[:, None]).T @ dev
        particles = particles[_systematic_resample(w, rng)]
        trace.wall_ns[k] = time.perf_counter_ns() - t0
        trace.means[k] = mean
        trace.covs[k] = cov
    return trace


def warmup() -> None:
    """Compile (or load from cache) the numba kernels so later timings exclude JIT work."""
    model = StateSpaceModel(
        np.eye(2), np.eye(2), 0.1 * np.eye(2), np.ones(2), np.full(2, 3.0), np.zeros(2), np.eye(2)
    )
    Y = np.array([[0.5, -0.2], [2.0, 1.0]])
    for surrogate in ("log", "smooth"):
        run_filter(model, FilterConfig(surrogate=surrogate), Y)
    run_filter(model, FilterConfig(constrained=True, constraints=annulus(1.0, 0.1)), Y)
