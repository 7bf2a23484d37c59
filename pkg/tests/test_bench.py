import csv
import dataclasses

import numpy as np
import pytest

from gridbso import bench
from gridbso.bench import (SUMMARY_COLUMNS, BenchConfig, FilterSpec, emit_report, mse,
                           read_manifest, run_benchmark, run_single, simulate_truth)
from gridbso.model import GaussianNoise, NoiseModel, ungm_model

SMALL = dict(horizon=15, n_runs=3, seed=11, n_samples=1000)


class ZeroNoise(NoiseModel):
    dim = 1

    def log_density(self, value):
        return np.where(np.asarray(value)[..., 0] == 0, 0.0, -np.inf)

    def sample(self, rng, size=None):
        return np.zeros((1,) if size is None else (size, 1))


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_simulate_truth_zero_noise():
    z = ZeroNoise()
    xs, ys = simulate_truth(ungm_model(), z, z, [0.0], 3, np.random.default_rng(0))
    assert xs[1, 0] == 8.0
    assert ys[0, 0] == 0.0
    xs, _ = simulate_truth(ungm_model(), z, z, [1.0], 3, np.random.default_rng(0))
    assert xs[1, 0] == pytest.approx(21.0, abs=1e-12)
    assert xs.shape == (4, 1)


def test_simulate_truth_deterministic():
    std = GaussianNoise.standard()
    x0 = GaussianNoise([0.0], [[2.0]])
    a = simulate_truth(ungm_model(), std, std, x0, 50, np.random.default_rng(3))
    b = simulate_truth(ungm_model(), std, std, x0, 50, np.random.default_rng(3))
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()
    with pytest.raises(ValueError):
        simulate_truth(ungm_model(), std, std, x0, 0, np.random.default_rng(3))


def test_filter_spec_parsing():
    assert FilterSpec.parse("pf:500") == FilterSpec("pf", 500)
    assert FilterSpec.parse(" EKF ").label == "ekf"
    for bad in ("ukf", "pf", "bso:x", "ekf:3", "bso:1"):
        with pytest.raises(ValueError):
            FilterSpec.parse(bad)
    with pytest.raises(ValueError):
        BenchConfig(filters=("ekf", "ekf"))


def test_paired_runs_and_independent_streams():
    a = run_single(BenchConfig(filters=("ekf",), **SMALL), 1)
    b = run_single(BenchConfig(filters=("pf:50", "ekf"), **SMALL), 1)
    assert a.truth.tobytes() == b.truth.tobytes()
    assert a.measurements.tobytes() == b.measurements.tobytes()
    # a filter's numbers do not depend on which other filters ran
    assert a.tracks["ekf"].estimates.tobytes() == b.tracks["ekf"].estimates.tobytes()
    c = run_single(BenchConfig(filters=("pf:50",), **SMALL), 1)
    assert c.tracks["pf:50"].estimates.tobytes() == b.tracks["pf:50"].estimates.tobytes()


def test_mse_definition():
    truth = np.array([[5.0], [1.0], [2.0], [3.0]])
    est = np.array([[0.0], [1.5], [2.0], [1.0]])
    assert mse(truth, est) == pytest.approx((0.25 + 0 + 4) / 3, rel=1e-15)


def test_report_files_and_mse_recomputation(tmp_path):
    cfg = BenchConfig(filters=("ekf", "pf:100", "bso:100"), **SMALL)
    report = run_benchmark(cfg)
    emit_report(report, tmp_path)
    rows = read_rows(tmp_path / "summary.csv")
    assert rows[0] == SUMMARY_COLUMNS
    assert [r[0] for r in rows[1:]] == ["ekf", "pf", "bso"]
    assert [r[1] for r in rows[1:]] == ["", "100", "100"]
    per_run = report.mse_table()
    for rec in report.runs:
        traj = read_rows(tmp_path / "runs" / f"run_{rec.run}.csv")
        head = traj[0]
        assert head[:3] == ["k", "truth", "y"]
        assert len(traj) - 1 == cfg.horizon + 1
        data = np.array(traj[1:], dtype=float)
        truth = data[:, 1:2]
        for lab, col in (("ekf", "ekf_est"), ("pf:100", "pf100_est"), ("bso:100", "bso100_est")):
            est = data[:, head.index(col)][:, None]
            assert mse(truth, est) == pytest.approx(rec.tracks[lab].mse, abs=1e-9)
            assert rec.tracks[lab].mse == per_run[lab][rec.run]
            lo = data[:, head.index(col.replace("_est", "_ci_low"))]
            hi = data[:, head.index(col.replace("_est", "_ci_high"))]
            assert np.all(lo <= hi)
    # aggregates
    for s in report.summary:
        vals = per_run[s.filter]
        assert s.mse_avg == pytest.approx(np.mean(vals), rel=1e-15)
        assert s.mse_min == np.min(vals)
        assert s.divergences == 0
        assert s.time_min_ms <= s.time_avg_ms


def test_float_round_trip_in_csv(tmp_path):
    cfg = BenchConfig(filters=("ekf",), **dict(SMALL, n_runs=1))
    report = run_benchmark(cfg)
    emit_report(report, tmp_path)
    traj = read_rows(tmp_path / "runs" / "run_0.csv")
    truth = np.array([float(r[1]) for r in traj[1:]])
    assert truth.tobytes() == report.runs[0].truth[:, 0].tobytes()


def test_empty_filter_list(tmp_path):
    report = run_benchmark(BenchConfig(filters=(), **SMALL))
    emit_report(report, tmp_path)
    assert read_rows(tmp_path / "summary.csv") == [SUMMARY_COLUMNS]


def test_manifest_reproduces_summary(tmp_path):
    cfg = BenchConfig(filters=("ekf", "pf:100", "bso:100"), **SMALL)
    first = run_benchmark(cfg)
    emit_report(first, tmp_path)
    again = run_benchmark(read_manifest(tmp_path / "manifest.json"))
    for a, b in zip(first.summary, again.summary):
        assert (a.filter, a.cells, a.mse_avg, a.mse_min, a.divergences) == \
               (b.filter, b.cells, b.mse_avg, b.mse_min, b.divergences)


def test_worker_processes_match_serial():
    cfg = BenchConfig(filters=("pf:100", "bso:100"), **SMALL)
    serial = run_benchmark(cfg)
    parallel = run_benchmark(dataclasses.replace(cfg, jobs=2))
    for lab in ("pf:100", "bso:100"):
        np.testing.assert_array_equal(serial.mse_table()[lab], parallel.mse_table()[lab])


def test_divergence_is_counted_not_raised(tmp_path):
    cfg = BenchConfig(filters=("ekf", "bso:50"), grid_lower=100, grid_upper=200, **SMALL)
    report = run_benchmark(cfg)
    bso = [s for s in report.summary if s.filter == "bso:50"][0]
    assert bso.divergences == SMALL["n_runs"]
    assert np.isnan(bso.mse_avg)
    track = report.runs[0].tracks["bso:50"]
    assert track.diverged and "DegenerateDensity" in track.message
    emit_report(report, tmp_path)
    row = read_rows(tmp_path / "summary.csv")[2]
    assert row[0] == "bso" and row[-1] == str(SMALL["n_runs"])


def test_progress_callback_and_bad_config():
    seen = []
    run_benchmark(BenchConfig(filters=("ekf",), **SMALL), progress=lambda r: seen.append(r.run))
    assert seen == [0, 1, 2]
    with pytest.raises(ValueError):
        run_benchmark(BenchConfig(filters=("ekf",), **dict(SMALL, n_runs=0)))
    with pytest.raises(ValueError):
        BenchConfig(bso_estimate="median")


def test_emit_report_surfaces_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    report = run_benchmark(BenchConfig(filters=("ekf",), **dict(SMALL, n_runs=1)))
    with pytest.raises(OSError, match="file"):
        emit_report(report, blocker / "out")


def test_config_dict_round_trip():
    cfg = BenchConfig(filters=("ekf", "bso:200"), bandwidth_rule="fixed", bandwidth=0.3, **SMALL)
    assert BenchConfig.from_dict(cfg.to_dict()) == cfg
    assert bench.FLOAT_FMT.format(0.1) == "0.10000000000000001"
