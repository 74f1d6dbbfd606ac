"""Monte-Carlo orchestration and result files.

Every run draws its data once from ``spec.seed(run)`` and feeds the same
trajectory to all filters, so comparisons between filters are paired.  Runs
are independent and can be spread over worker processes; the report only
depends on the seeds, never on scheduling.
"""

from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..filters import (
    FilterConfig,
    FilterStepError,
    kalman_baseline,
    particle_filter_oracle,
    projection_baseline,
    run_filter,
    warmup,
)
from .experiments import ExperimentSpec, save_config
from .metrics import mean_std, rmse

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_FAILED_FRACTION = 0.05


@dataclass(frozen=True)
class RunRecord:
    run: int
    seed: int
    filter: str
    ok: bool
    rmse: dict
    seconds: float
    mm_iters_median: float
    descent_violations: int
    rejected_steps: int
    g_resid_max: float
    error: str = ""


@dataclass
class RmseReport:
    """Per-filter RMSE lists (one value per successful run) and timing."""

    spec: ExperimentSpec
    records: list
    failed_runs: list = field(default_factory=list)
    example: dict = field(default_factory=dict, repr=False)

    @property
    def filters(self) -> tuple:
        return self.spec.filters

    @property
    def metrics(self) -> tuple:
        return tuple(self.spec.metrics)

    def _ok(self, filt):
        return [r for r in self.records if r.filter == filt and r.run not in self.failed_runs]

    def rmse_values(self, filt: str, metric: str | None = None) -> list:
        metric = metric or self.metrics[0]
        return [r.rmse[metric] for r in self._ok(filt)]

    def mean(self, filt: str, metric: str | None = None) -> float:
        return mean_std(self.rmse_values(filt, metric))[0]

    def std(self, filt: str, metric: str | None = None) -> float:
        return mean_std(self.rmse_values(filt, metric))[1]

    def seconds(self, filt: str) -> list:
        return [r.seconds for r in self._ok(filt)]

    def mean_seconds(self, filt: str) -> float:
        return mean_std(self.seconds(filt))[0]

    def runs_ok(self, filt: str) -> list:
        return self._ok(filt)

    @property
    def failed_fraction(self) -> float:
        return len(self.failed_runs) / self.spec.n_runs

    @property
    def failed(self) -> bool:
        return self.failed_fraction > MAX_FAILED_FRACTION

    def summary_rows(self) -> list:
        rows = []
        for f in self.filters:
            for m in self.metrics:
                mean, std = mean_std(self.rmse_values(f, m))
                rows.append(
                    {
                        "filter": f,
                        "metric": m,
                        "n_ok": len(self.rmse_values(f, m)),
                        "rmse_mean": mean,
                        "rmse_std": std,
                        "seconds_mean": self.mean_seconds(f),
                    }
                )
        return rows


def _filter_config(spec: ExperimentSpec, surrogate: str, constrained: bool) -> FilterConfig:
    o = spec.options
    return FilterConfig(
        surrogate=surrogate,
        constrained=constrained,
        constraints=spec.constraints,
        mm_tol=o.mm_tol,
        mm_max_iter=o.mm_max_iter,
        r_mode=o.r_mode,
    )


def _run_filter(spec, name, Y, seed, cache):
    """Returns ``(trace, seconds)``; ``cache`` shares the unconstrained trace with the projection."""
    model = spec.model
    t0 = time.perf_counter()
    if name == "TFMM-log":
        trace = run_filter(model, _filter_config(spec, "log", False), Y)
    elif name == "TFMM-smooth":
        trace = run_filter(model, _filter_config(spec, "smooth", False), Y)
    elif name == "TFMM-unconstrained":
        trace = run_filter(model, _filter_config(spec, spec.options.surrogate_for_constrained, False), Y)
    elif name == "TFMM-constrained":
        trace = run_filter(model, _filter_config(spec, spec.options.surrogate_for_constrained, True), Y)
    elif name == "KF":
        R = spec.options.kf_variance
        trace = kalman_baseline(model, Y, None if R is None else np.asarray(R))
    elif name == "PF":
        trace = particle_filter_oracle(model, Y, spec.options.pf_particles, seed=seed)
    elif name == "projection":
        base, base_seconds = cache.get("TFMM-unconstrained", (None, 0.0))
        if base is None:
            base, base_seconds = _run_filter(spec, "TFMM-unconstrained", Y, seed, {})
        t0 = time.perf_counter()
        cfg = _filter_config(spec, spec.options.surrogate_for_constrained, False)
        trace = projection_baseline(model, spec.constraints, Y, cfg, unconstrained=base)
        return trace, base_seconds + (time.perf_counter() - t0)
    else:  # pragma: no cover - rejected by validation
        raise ValueError(f"unknown filter {name!r}")
    seconds = time.perf_counter() - t0
    cache[name] = (trace, seconds)
    return trace, seconds


def execute_run(spec: ExperimentSpec, run: int, keep_trajectories: bool = False):
    """All filters of ``spec`` on the data of run ``run``.

    Returns ``(records, trajectories)``; trajectories are only collected when
    asked for (the report keeps one run for plotting).
    """
    seed = spec.seed(run)
    data = spec.generate(run)
    Y = data.measurements
    records = []
    traj = {"truth": data.states, "measurements": Y} if keep_trajectories else None
    cache: dict = {}
    for name in spec.filters:
        try:
            trace, seconds = _run_filter(spec, name, Y, seed, cache)
        except (FilterStepError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("run %d (seed %d): %s failed: %s", run, seed, name, exc)
            records.append(
                RunRecord(run, seed, name, False, {}, float("nan"), float("nan"), 0, 0, float("nan"), str(exc))
            )
            continue
        scores = {m: rmse(trace.means, data.states, idx) for m, idx in spec.metrics.items()}
        g = trace.g_resid_max
        records.append(
            RunRecord(
                run=run,
                seed=seed,
                filter=name,
                ok=True,
                rmse=scores,
                seconds=seconds,
                mm_iters_median=float(np.median(trace.mm_iters)),
                descent_violations=int(trace.descent_violations.sum()),
                rejected_steps=int(trace.rejected_steps.sum()),
                g_resid_max=float(np.max(g)) if np.isfinite(g).any() else float("nan"),
            )
        )
        if traj is not None:
            traj[name] = trace.means.copy()
    return records, traj


def _worker_init():
    warmup()


def _worker(args):
    spec, run = args
    return execute_run(spec, run, keep_trajectories=(run == 0))


def run_experiment(spec: ExperimentSpec, parallelism: int = 1, out_dir=None) -> RmseReport:
    """Run all ``spec.n_runs`` runs and aggregate them.

    Runs whose filters raise a step error are logged and left out of every
    aggregate (all filters, to keep the comparison paired).  When ``out_dir``
    is given the CSV files are written there.
    """
    jobs = [(spec, i) for i in range(spec.n_runs)]
    if parallelism <= 1 or spec.n_runs == 1:
        warmup()
        results = [_worker(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=parallelism, initializer=_worker_init) as pool:
            results = list(pool.map(_worker, jobs))
    records = [r for recs, _ in results for r in recs]
    failed = sorted({r.run for r in records if not r.ok})
    report = RmseReport(spec, records, failed, results[0][1] or {})
    if failed:
        log.warning(
            "%d of %d runs failed and were excluded (%.1f%%)",
            len(failed),
            spec.n_runs,
            100 * report.failed_fraction,
        )
    if out_dir is not None:
        write_outputs(report, out_dir)
    return report


def _header(fh, writer, columns):
    fh.write(f"# schema_version={SCHEMA_VERSION}\n")
    writer.writerow(columns)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_outputs(report: RmseReport, out_dir) -> Path:
    """Write ``runs.csv``, ``summary.csv``, ``boxplot.csv``, trajectory files and the config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = report.spec
    metrics = report.metrics
    save_config(spec, out / "config.json")

    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        _header(
            fh,
            w,
            ["run", "seed", "filter", "ok"]
            + [f"rmse_{m}" for m in metrics]
            + ["seconds", "mm_iters_median", "descent_violations", "rejected_steps", "g_resid_max", "error"],
        )
        for r in report.records:
            w.writerow(
                [r.run, r.seed, r.filter, _fmt(r.ok)]
                + [_fmt(r.rmse.get(m, float("nan"))) for m in metrics]
                + [
                    _fmt(r.seconds),
                    _fmt(r.mm_iters_median),
                    r.descent_violations,
                    r.rejected_steps,
                    _fmt(r.g_resid_max),
                    r.error,
                ]
            )

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        _header(fh, w, ["filter", "metric", "n_ok", "rmse_mean", "rmse_std", "seconds_mean"])
        for row in report.summary_rows():
            w.writerow([_fmt(v) for v in row.values()])

    with open(out / "boxplot.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        _header(fh, w, ["filter", "metric", "run", "rmse"])
        for f in report.filters:
            for m in metrics:
                for r in report.runs_ok(f):
                    w.writerow([f, m, r.run, _fmt(r.rmse[m])])

    ex = report.example
    if ex:
        n_x = ex["truth"].shape[1]
        sources = ["truth"] + [f for f in report.filters if f in ex]
        with open(out / "trajectory.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            _header(fh, w, ["k", "source"] + [f"x_{i + 1}" for i in range(n_x)])
            for s in sources:
                for k, x in enumerate(ex[s]):
                    w.writerow([k + 1, s] + [_fmt(v) for v in x])
        if spec.truth is not None:
            ip, iv = spec.truth.position_indices, spec.truth.velocity_indices
            with open(out / "arrows.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                _header(fh, w, ["k", "source", "px", "py", "vx", "vy"])
                for s in sources:
                    for k, x in enumerate(ex[s]):
                        w.writerow([k + 1, s] + [_fmt(x[i]) for i in (*ip, *iv)])
    return out


def default_out_dir() -> Path:
    return Path(os.environ.get("MMKALMAN_BENCH_OUT", "bench_out"))
