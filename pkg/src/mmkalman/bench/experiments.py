"""Experiment definitions: what to simulate, which filters to run, how to score them.

An :class:`ExperimentSpec` is a plain value that round-trips through JSON, so
a whole benchmark can be stored next to its results and re-run bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..constraints import annulus, constraint_from_dict
from ..model import MeasurementNoiseSpec, StateSpaceModel, Trajectory, sample_measurement_noise, simulate

CONFIG_VERSION = 1

SCENARIOS = ("exp1_rotation", "exp2_circular_road", "custom")

# filter name -> whether it needs the experiment's constraints
FILTERS = {
    "TFMM-log": False,
    "TFMM-smooth": False,
    "KF": False,
    "PF": False,
    "TFMM-constrained": True,
    "TFMM-unconstrained": False,
    "projection": True,
}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass(frozen=True)
class CircleTruth:
    """Ground truth moving along a circle at constant speed.

    State layout follows ``position_indices`` / ``velocity_indices``.  With
    ``process_var > 0`` a deviation driven through ``noise_input`` is added;
    ``mode="reprojected"`` then puts the position back on the circle and keeps
    only the tangential velocity, ``mode="raw"`` leaves the deviation as is.
    """

    radius: float = 100.0
    speed: float = 4.0
    dt: float = 1.0
    start_angle: float = 0.0
    clockwise: bool = True
    process_var: float = 0.0
    mode: str = "reprojected"
    position_indices: tuple = (0, 2)
    velocity_indices: tuple = (1, 3)
    noise_input: tuple | None = None

    def __post_init__(self):
        if self.mode not in ("reprojected", "raw"):
            raise ConfigError(f"truth mode must be 'reprojected' or 'raw', got {self.mode!r}")
        if not self.radius > 0 or self.speed < 0 or not self.dt > 0 or self.process_var < 0:
            raise ConfigError("circle truth needs radius > 0, speed >= 0, dt > 0, process_var >= 0")
        object.__setattr__(self, "position_indices", tuple(int(i) for i in self.position_indices))
        object.__setattr__(self, "velocity_indices", tuple(int(i) for i in self.velocity_indices))
        if self.noise_input is not None:
            object.__setattr__(self, "noise_input", tuple(tuple(float(v) for v in row) for row in self.noise_input))

    @property
    def angular_rate(self) -> float:
        return self.speed / self.radius

    def states(self, T: int, n_x: int, A: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        sign = -1.0 if self.clockwise else 1.0
        k = np.arange(T)
        # angle measured from the +y axis so that start_angle=0 begins at (0, r)
        th = self.start_angle - sign * self.angular_rate * self.dt * k
        pos = self.radius * np.stack([np.sin(th), np.cos(th)], axis=1)
        vel = -sign * self.speed * np.stack([np.cos(th), -np.sin(th)], axis=1)
        X = np.zeros((T, n_x))
        ip, iv = list(self.position_indices), list(self.velocity_indices)
        X[:, ip] = pos
        X[:, iv] = vel
        if self.process_var == 0:
            return X

        G = np.asarray(self.noise_input, dtype=float)
        delta = np.zeros(n_x)
        for t in range(1, T):
            delta = A @ delta + G @ (np.sqrt(self.process_var) * rng.standard_normal(G.shape[1]))
            x = X[t] + delta
            if self.mode == "reprojected":
                p = x[ip]
                u = p / np.linalg.norm(p)
                x[ip] = self.radius * u
                v = x[iv]
                x[iv] = v - (v @ u) * u
                delta = x - X[t]
            X[t] = x
        return X

    def to_dict(self) -> dict:
        d = {
            "kind": "circle",
            "radius": self.radius,
            "speed": self.speed,
            "dt": self.dt,
            "start_angle": self.start_angle,
            "clockwise": self.clockwise,
            "process_var": self.process_var,
            "mode": self.mode,
            "position_indices": list(self.position_indices),
            "velocity_indices": list(self.velocity_indices),
        }
        if self.noise_input is not None:
            d["noise_input"] = [list(r) for r in self.noise_input]
        return d


@dataclass(frozen=True)
class FilterOptions:
    surrogate_for_constrained: str = "log"
    mm_tol: float = 1e-6
    mm_max_iter: int = 50
    r_mode: str = "log_match"
    kf_variance: tuple | None = None
    pf_particles: int = 10_000

    def to_dict(self) -> dict:
        return {
            "surrogate_for_constrained": self.surrogate_for_constrained,
            "mm_tol": self.mm_tol,
            "mm_max_iter": self.mm_max_iter,
            "r_mode": self.r_mode,
            "kf_variance": None if self.kf_variance is None else list(self.kf_variance),
            "pf_particles": self.pf_particles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterOptions":
        d = dict(d)
        if d.get("kf_variance") is not None:
            d["kf_variance"] = tuple(float(v) for v in np.atleast_1d(d["kf_variance"]))
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad filter_options: {exc}") from None


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    scenario: str
    model: StateSpaceModel
    noise: MeasurementNoiseSpec
    filters: tuple
    T: int
    n_runs: int
    base_seed: int = 0
    constraints: tuple = ()
    truth: CircleTruth | None = None
    metrics: dict = field(default_factory=dict)
    options: FilterOptions = FilterOptions()

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        metrics = self.metrics or {"state": tuple(range(self.model.n_x))}
        object.__setattr__(self, "metrics", {k: tuple(int(i) for i in v) for k, v in metrics.items()})
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.T < 1:
            raise ConfigError("T must be at least 1")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be at least 1")
        if not self.filters:
            raise ConfigError("filter list is empty")
        for f in self.filters:
            if f not in FILTERS:
                raise ConfigError(f"unknown filter {f!r}; expected one of {sorted(FILTERS)}")
            if FILTERS[f] and not self.constraints:
                raise ConfigError(f"filter {f!r} needs constraints")
        for name, idx in self.metrics.items():
            if not idx or min(idx) < 0 or max(idx) >= self.model.n_x:
                raise ConfigError(f"metric {name!r} has invalid state indices {idx}")
        if self.options.pf_particles < 100:
            raise ConfigError("pf_particles must be at least 100")

    def seed(self, run: int) -> int:
        return self.base_seed + run

    def generate(self, run: int) -> Trajectory:
        """Data for run ``run``; the same for every filter."""
        seed = self.seed(run)
        if self.truth is None:
            return simulate(self.model, self.noise, self.T, seed)
        rng = np.random.default_rng(seed)
        X = self.truth.states(self.T, self.model.n_x, self.model.A, rng)
        v, mask = sample_measurement_noise(self.noise, rng, self.T, self.model.n_y)
        return Trajectory(X, X @ self.model.C.T + v, mask)

    def with_overrides(self, **kw) -> "ExperimentSpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {
            "config_version": CONFIG_VERSION,
            "name": self.name,
            "scenario": self.scenario,
            "model": self.model.to_dict(),
            "noise": self.noise.to_dict(),
            "filters": list(self.filters),
            "T": self.T,
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "constraints": [c.to_dict() for c in self.constraints],
            "truth": None if self.truth is None else self.truth.to_dict(),
            "metrics": {k: list(v) for k, v in self.metrics.items()},
            "filter_options": self.options.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        version = d.get("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config_version {version}")
        required = ("name", "scenario", "model", "noise", "filters", "T", "n_runs")
        missing = [k for k in required if k not in d]
        if missing:
            raise ConfigError(f"config is missing {', '.join(missing)}")
        try:
            truth = d.get("truth")
            if truth is not None:
                truth = dict(truth)
                if truth.pop("kind", "circle") != "circle":
                    raise ConfigError("only 'circle' truth is supported")
                truth = CircleTruth(**truth)
            return cls(
                name=str(d["name"]),
                scenario=d["scenario"],
                model=StateSpaceModel.from_dict(d["model"]),
                noise=MeasurementNoiseSpec.from_dict(d["noise"]),
                filters=tuple(d["filters"]),
                T=_int(d["T"], "T"),
                n_runs=_int(d["n_runs"], "n_runs"),
                base_seed=_int(d.get("base_seed", 0), "base_seed"),
                constraints=tuple(constraint_from_dict(c) for c in d.get("constraints", [])),
                truth=truth,
                metrics=d.get("metrics") or {},
                options=FilterOptions.from_dict(d.get("filter_options", {})),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def _int(v, name) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    return int(v)


def load_config(path) -> ExperimentSpec:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return ExperimentSpec.from_dict(d)


def save_config(spec: ExperimentSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, s], [-s, c]])


def build_exp1(T: int = 1000, n_runs: int = 100, base_seed: int = 0) -> ExperimentSpec:
    """Rotating 2-D state observed directly under contaminated Gaussian noise.

    The filters model the noise as Student-t with nu = 3 and a scale chosen so
    its variance equals the mixture variance 0.9 * 0.1 + 0.1 * 10 = 1.09.
    """
    nu = 3.0
    var = 0.9 * 0.1 + 0.1 * 10.0
    sigma = np.sqrt(var * (nu - 2) / nu)
    model = StateSpaceModel(
        A=rotation(0.2 * np.pi),
        C=np.eye(2),
        Q=0.1 * np.eye(2),
        sigma=np.full(2, sigma),
        nu=np.full(2, nu),
        x0_mean=np.zeros(2),
        P0=np.eye(2),
    )
    return ExperimentSpec(
        name="exp1",
        scenario="exp1_rotation",
        model=model,
        noise=MeasurementNoiseSpec.contaminated(0.1, 0.1, 10.0),
        filters=("TFMM-log", "TFMM-smooth", "KF", "PF"),
        T=T,
        n_runs=n_runs,
        base_seed=base_seed,
        metrics={"state": (0, 1)},
        options=FilterOptions(kf_variance=(var, var)),
    )


def kinematic_model(dt: float = 1.0):
    """Constant-velocity ``A`` and noise-input matrix for state ``[px, vx, py, vy]``."""
    A = np.array([[1, dt, 0, 0], [0, 1, 0, 0], [0, 0, 1, dt], [0, 0, 0, 1]], dtype=float)
    G = np.array([[0.5 * dt**2, 0], [dt, 0], [0, 0.5 * dt**2], [0, dt]], dtype=float)
    return A, G


def build_exp2(T: int = 35, n_runs: int = 50, base_seed: int = 0) -> ExperimentSpec:
    """Vehicle on a circular road of radius 100 m at 4 m/s, positions measured.

    Filters use a constant-velocity model with process noise 1.5 through the
    noise-input matrix; the constrained filters keep the position inside the
    band 100 +- 0.1 m.  Measurement noise is Student-t, nu = 3, variance 1.09.
    """
    nu = 3.0
    var = 1.09
    sigma = np.sqrt(var * (nu - 2) / nu)
    A, G = kinematic_model(1.0)
    model = StateSpaceModel(
        A=A,
        C=np.array([[1.0, 0, 0, 0], [0, 0, 1.0, 0]]),
        Q=1.5 * G @ G.T,
        sigma=np.full(2, sigma),
        nu=np.full(2, nu),
        x0_mean=np.array([0.0, 4.0, 100.0, 0.0]),
        P0=np.eye(4),
    )
    return ExperimentSpec(
        name="exp2",
        scenario="exp2_circular_road",
        model=model,
        noise=MeasurementNoiseSpec.student_t(np.full(2, sigma), np.full(2, nu)),
        filters=("TFMM-constrained", "TFMM-unconstrained", "projection"),
        T=T,
        n_runs=n_runs,
        base_seed=base_seed,
        constraints=tuple(annulus(100.0, 0.1, (0, 2))),
        truth=CircleTruth(noise_input=G),
        metrics={"position": (0, 2), "velocity": (1, 3)},
    )
