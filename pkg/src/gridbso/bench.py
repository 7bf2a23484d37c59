"""Monte Carlo comparison of the grid observer against the EKF and the PF.

Every run draws one truth/measurement realization which all filters then
consume (paired comparison). Randomness comes from one master seed through
``numpy.random.SeedSequence`` substreams::

    truth of run r          SeedSequence(seed, spawn_key=(r, 0))
    filter F in run r       SeedSequence(seed, spawn_key=(r, 1, crc32(F)))

so a filter's numbers do not depend on which other filters ran alongside it.
Inside a filter the generator is consumed in step order (the observer draws
chain increments, chain uniforms, then process noise; the PF draws process
noise, then the resampling offset).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import platform
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import ExtendedKalmanFilter, ParticleFilter
from .bso import BayesianStateObserver, BsoConfig
from .errors import Divergence, GridBsoError
from .grid import build_uniform_grid
from .kde import KdeConfig
from .model import NoiseModel, get_model

SUMMARY_COLUMNS = ["filter", "cells", "time_avg_ms", "time_min_ms", "mse_avg", "mse_min",
                   "divergences"]
FLOAT_FMT = "{:.17g}"


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    cells: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("ekf", "pf", "bso"):
            raise ValueError(f"unknown filter {self.kind!r} (expected ekf, pf or bso)")
        if self.kind == "ekf" and self.cells is not None:
            raise ValueError("ekf takes no cell count")
        if self.kind != "ekf":
            if self.cells is None:
                raise ValueError(f"{self.kind} needs a cell count, e.g. {self.kind}:500")
            if self.cells < 2:
                raise ValueError(f"{self.kind} needs at least 2 cells")

    @classmethod
    def parse(cls, text):
        kind, _, cells = text.strip().partition(":")
        if cells:
            try:
                n = int(cells)
            except ValueError:
                raise ValueError(f"bad cell count in {text!r}") from None
            return cls(kind.lower(), n)
        return cls(kind.lower(), None)

    @property
    def label(self):
        return self.kind if self.cells is None else f"{self.kind}:{self.cells}"


@dataclass(frozen=True)
class BenchConfig:
    """Everything that determines the non-timing output of a benchmark."""

    filters: tuple = ()
    model: str = "ungm"
    horizon: int = 100
    n_runs: int = 100
    seed: int = 0
    grid_lower: float = -40.0
    grid_upper: float = 40.0
    n_samples: int = 20_000
    burn_in: Optional[int] = None
    thinning: int = 1
    proposal_std: Optional[float] = None
    proposal_scale: float = 2.4
    chains: int = 1
    kernel: str = "epanechnikov"
    bandwidth_rule: str = "silverman"
    bandwidth: Optional[float] = None
    bso_estimate: str = "map"
    threads: int = 1
    jobs: int = 1

    def __post_init__(self):
        if self.bso_estimate not in ("map", "mean"):
            raise ValueError("bso_estimate must be 'map' or 'mean'")
        specs = tuple(f if isinstance(f, FilterSpec) else FilterSpec.parse(f) for f in self.filters)
        object.__setattr__(self, "filters", specs)
        labels = [f.label for f in specs]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate filter in selection")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["filters"] = [f.label for f in self.filters]
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: (tuple(v) if k == "filters" else v) for k, v in d.items() if k in names})

    def bso_config(self, cells):
        grid = build_uniform_grid(self.grid_lower, self.grid_upper, cells)
        if self.bandwidth_rule == "fixed":
            kde = KdeConfig(self.kernel, "fixed", np.array([[self.bandwidth]]))
        else:
            kde = KdeConfig(self.kernel, self.bandwidth_rule)
        return BsoConfig(grid=grid, n_samples=self.n_samples, kde=kde, burn_in=self.burn_in,
                         thinning=self.thinning, proposal_std=self.proposal_std,
                         proposal_scale=self.proposal_scale, chains=self.chains,
                         threads=self.threads)


def simulate_truth(model, noise_w, noise_v, x0, horizon, rng, u=None):
    """Forward-simulate ``x_0..x_H`` and ``y_0..y_H``.

    ``x0`` is a noise model to sample the initial state from, or a fixed state.
    Draw order: x_0, then w_0..w_{H-1}, then v_0..v_H.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if isinstance(x0, NoiseModel):
        x_first = np.atleast_1d(np.asarray(x0.sample(rng), dtype=float))
    else:
        x_first = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x_first.size
    w = np.asarray(noise_w.sample(rng, horizon), dtype=float).reshape(horizon, -1)
    v = np.asarray(noise_v.sample(rng, horizon + 1), dtype=float).reshape(horizon + 1, -1)
    xs = np.empty((horizon + 1, n))
    xs[0] = x_first
    for k in range(horizon):
        uk = None if u is None else u[k]
        xs[k + 1] = np.asarray(model.f(k, xs[k], uk, w[k]), dtype=float).reshape(n)
    ys = np.stack([np.asarray(model.h(k, xs[k], None if u is None else u[k], v[k]),
                              dtype=float).reshape(-1) for k in range(horizon + 1)])
    return xs, ys


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def filter_rng(seed, run, label):
    return _stream(seed, run, 1, zlib.crc32(label.encode()))


def truth_rng(seed, run):
    return _stream(seed, run, 0)


@dataclass
class FilterTrack:
    """One filter's output over one run."""

    label: str
    estimates: np.ndarray  # (H+1, n), NaN after a divergence
    ci95: np.ndarray  # (H+1, n, 2)
    step_ns: np.ndarray  # (H,), NaN after a divergence
    mse: float = math.nan
    diverged: bool = False
    message: str = ""
    extra: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    run: int
    truth: np.ndarray
    measurements: np.ndarray
    tracks: dict


def mse(truth, estimates):
    """Mean squared error over steps 1..H (the initial step is excluded)."""
    e = np.asarray(truth)[1:] - np.asarray(estimates)[1:]
    return float(np.mean(np.sum(e * e, axis=-1)))


class _Runner:
    """Adapts the three filter classes to one init/first/step loop."""

    def __init__(self, spec, cfg, model_spec, rng):
        self.spec, self.rng = spec, rng
        self.bso_estimate = cfg.bso_estimate
        ms = model_spec
        if spec.kind == "ekf":
            self.f = ExtendedKalmanFilter(ms.model, ms.noise_w, ms.noise_v)
            self.state = self.f.init(ms.x0)
        elif spec.kind == "pf":
            self.f = ParticleFilter(ms.model, ms.noise_w, ms.noise_v, spec.cells)
            self.state = self.f.init(ms.x0, rng)
        else:
            self.f = BayesianStateObserver(cfg.bso_config(spec.cells), ms.model, ms.noise_w,
                                           ms.noise_v)
            self.state = self.f.init(ms.x0)

    def first(self, y):
        kind = self.spec.kind
        if kind == "ekf":
            self.state = self.f.update(self.state, y)
            return self.f.estimate(self.state)
        if kind == "pf":
            self.state, est = self.f.update(self.state, y, self.rng)
            return est
        self.state = self.f.update(self.state, y)
        return self.state.estimate

    def step(self, y):
        self.state, est = self.f.step(self.state, y, self.rng)
        return est

    def reported(self, est):
        # the BSO reports its MAP node unless configured otherwise; EKF and PF their mean
        if self.spec.kind == "bso" and self.bso_estimate == "map":
            return est.map
        return est.mean

    def close(self):
        if self.spec.kind == "bso":
            self.f.close()


def run_single(cfg, run, on_posterior=None):
    """Run every configured filter on realization ``run``.

    ``on_posterior(label, k, pdf)`` is called with each BSO posterior.
    """
    ms = get_model(cfg.model)
    xs, ys = simulate_truth(ms.model, ms.noise_w, ms.noise_v, ms.x0, cfg.horizon,
                            truth_rng(cfg.seed, run))
    H, n = cfg.horizon, xs.shape[1]
    tracks = {}
    for spec in cfg.filters:
        label = spec.label
        est = np.full((H + 1, n), np.nan)
        ci = np.full((H + 1, n, 2), np.nan)
        step_ns = np.full(H, np.nan)
        track = FilterTrack(label, est, ci, step_ns)
        runner = None
        k = 0
        try:
            runner = _Runner(spec, cfg, ms, filter_rng(cfg.seed, run, label))
            pe = runner.first(ys[0])
            est[0], ci[0] = runner.reported(pe), pe.ci95
            if on_posterior is not None and spec.kind == "bso":
                on_posterior(label, 0, runner.state.posterior)
            for k in range(1, H + 1):
                t0 = time.perf_counter_ns()
                pe = runner.step(ys[k])
                step_ns[k - 1] = time.perf_counter_ns() - t0
                est[k], ci[k] = runner.reported(pe), pe.ci95
                if on_posterior is not None and spec.kind == "bso":
                    on_posterior(label, k, runner.state.posterior)
        except (Divergence, GridBsoError) as exc:
            if getattr(exc, "step", None) is None and isinstance(exc, Divergence):
                exc.step = k
            track.diverged = True
            track.message = f"{type(exc).__name__}: {exc}"
            est[k:] = np.nan
            ci[k:] = np.nan
            step_ns[max(k - 1, 0):] = np.nan
        finally:
            if runner is not None:
                runner.close()
        if not track.diverged:
            track.mse = mse(xs, est)
        tracks[label] = track
    return RunRecord(run, xs, ys, tracks)


@dataclass
class FilterSummary:
    filter: str
    cells: Optional[int]
    time_avg_ms: float
    time_min_ms: float
    mse_avg: float
    mse_min: float
    divergences: int

    def row(self):
        def fmt(v):
            return "" if v is None else (FLOAT_FMT.format(v) if isinstance(v, float) else str(v))
        return [self.filter.split(":")[0], fmt(self.cells), fmt(self.time_avg_ms),
                fmt(self.time_min_ms), fmt(self.mse_avg), fmt(self.mse_min),
                str(self.divergences)]


@dataclass
class BenchmarkReport:
    config: BenchConfig
    runs: list
    summary: list
    environment: dict = field(default_factory=dict)

    def mse_table(self):
        """Per-run MSE, ``{label: array(n_runs)}`` with NaN for diverged runs."""
        return {f.label: np.array([r.tracks[f.label].mse for r in self.runs])
                for f in self.config.filters}

    def time_table(self):
        """Per-run mean step time in ms, ``{label: array(n_runs)}``."""
        return {f.label: np.array([np.nanmean(r.tracks[f.label].step_ns) / 1e6
                                   if not r.tracks[f.label].diverged else np.nan
                                   for r in self.runs])
                for f in self.config.filters}


def summarize(cfg, runs):
    out = []
    for spec in cfg.filters:
        tracks = [r.tracks[spec.label] for r in runs]
        ok = [t for t in tracks if not t.diverged]
        times = [float(np.mean(t.step_ns)) / 1e6 for t in ok]
        errs = [t.mse for t in ok]
        out.append(FilterSummary(
            filter=spec.label, cells=spec.cells,
            time_avg_ms=float(np.mean(times)) if times else math.nan,
            time_min_ms=float(np.min(times)) if times else math.nan,
            mse_avg=float(np.mean(errs)) if errs else math.nan,
            mse_min=float(np.min(errs)) if errs else math.nan,
            divergences=len(tracks) - len(ok)))
    return out


def _run_job(args):
    cfg, run = args
    return run_single(cfg, run)


def run_benchmark(cfg, progress=None):
    """All ``cfg.n_runs`` paired runs plus the Table-style aggregate.

    With ``cfg.jobs > 1`` runs are spread over worker processes; results are
    identical to a serial run apart from timings.
    """
    if cfg.n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    runs = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            for rec in pool.map(_run_job, [(cfg, r) for r in range(cfg.n_runs)]):
                runs.append(rec)
                if progress:
                    progress(rec)
    else:
        for r in range(cfg.n_runs):
            rec = run_single(cfg, r)
            runs.append(rec)
            if progress:
                progress(rec)
    env = {"python": platform.python_version(), "numpy": np.__version__,
           "machine": platform.machine(), "cpu_count": os.cpu_count()}
    return BenchmarkReport(cfg, runs, summarize(cfg, runs), env)


def write_summary(summary, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow(s.row())


def _col(label):
    return label.replace(":", "")


def write_trajectory(record, labels, path):
    """Per-step CSV: k, truth, y, then estimate and 95% band per filter.

    Multi-dimensional states get one column group per component, suffixed
    with the component index.
    """
    n = record.truth.shape[1]
    ny = record.measurements.shape[1]
    sfx = (lambda d: "") if n == 1 else (lambda d: f"_{d}")
    header = ["k"] + [f"truth{sfx(d)}" for d in range(n)]
    header += ["y" if ny == 1 else f"y_{j}" for j in range(ny)]
    for lab in labels:
        c = _col(lab)
        for d in range(n):
            header += [f"{c}_est{sfx(d)}", f"{c}_ci_low{sfx(d)}", f"{c}_ci_high{sfx(d)}"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(record.truth.shape[0]):
            row = [str(k)] + [FLOAT_FMT.format(v) for v in record.truth[k]]
            row += [FLOAT_FMT.format(v) for v in record.measurements[k]]
            for lab in labels:
                t = record.tracks[lab]
                for d in range(n):
                    row += [FLOAT_FMT.format(t.estimates[k, d]),
                            FLOAT_FMT.format(t.ci95[k, d, 0]),
                            FLOAT_FMT.format(t.ci95[k, d, 1])]
            w.writerow(row)


def write_manifest(report, path, extra=None):
    data = {"config": report.config.to_dict(),
            "model_description": get_model(report.config.model).description,
            "threads": report.config.threads,
            "rng": "numpy SeedSequence(seed, spawn_key=(run, 0)) for truth; "
                   "(run, 1, crc32(label)) per filter",
            "environment": report.environment}
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    data = json.loads(Path(path).read_text())
    return BenchConfig.from_dict(data["config"])


def emit_report(report, outdir):
    """Write ``summary.csv``, ``runs/run_<r>.csv`` and ``manifest.json``."""
    outdir = Path(outdir)
    try:
        (outdir / "runs").mkdir(parents=True, exist_ok=True)
        write_summary(report.summary, outdir / "summary.csv")
        labels = [f.label for f in report.config.filters]
        for rec in report.runs:
            write_trajectory(rec, labels, outdir / "runs" / f"run_{rec.run}.csv")
        write_manifest(report, outdir / "manifest.json")
    except OSError as exc:
        raise OSError(f"could not write report to {outdir}: {exc}") from exc
    return outdir
