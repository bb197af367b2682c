import math

import pytest

from app.simulation.engine import run_execution
from app.simulation.errors import ConfigError, DegenerateInputError
from app.simulation.harness import (
    SweepRow,
    fit_constant,
    fit_rows,
    front_jam_energy_oracle,
    group_envelopes,
    model_metric,
    read_sweep_csv,
    run_trials,
    summarize_trace,
    sweep,
    write_sweep_csv,
)
from app.simulation.models import ExecutionConfig
from app.simulation.protocols import BackoffSchedule

POWERS = [2**k for k in range(4, 13)]


def test_front_jam_oracle_reciprocal():
    assert front_jam_energy_oracle(BackoffSchedule.reciprocal(), 100) == pytest.approx(5.187378, abs=1e-6)
    assert front_jam_energy_oracle(BackoffSchedule.reciprocal(), 1) == 1.0


def test_front_jam_oracle_log_reciprocal_grows_slowly():
    schedule = BackoffSchedule.log_reciprocal(4.0)
    small = front_jam_energy_oracle(schedule, 100)
    large = front_jam_energy_oracle(schedule, 1000)
    assert small == pytest.approx(54.934703, abs=1e-5)
    assert large == pytest.approx(131.363660, abs=1e-5)
    assert large / math.log2(1000) ** 2 < small / math.log2(100) ** 2 * 1.5
    with pytest.raises(DegenerateInputError):
        front_jam_energy_oracle(schedule, 0)


def test_fit_recovers_exact_constant():
    points = [(n, 0, 2 * n * math.log2(n)) for n in POWERS]
    fit = fit_constant(points, "n_log_n_plus_d")
    assert fit.constant == pytest.approx(2.0)
    assert fit.max_ratio == pytest.approx(1.0)
    assert fit.envelope == pytest.approx(2.0)
    assert fit.spread == pytest.approx(1.0)
    assert fit.conforming
    assert all(abs(r) < 1e-6 for r in fit.residuals)


def test_single_outlier_moves_envelope_not_least_squares():
    points = [(n, 0, 2 * n * math.log2(n)) for n in POWERS]
    points[0] = (16, 0, 4 * 16 * 4)
    fit = fit_constant(points, "n_log_n_plus_d")
    assert fit.envelope == pytest.approx(4.0)
    assert abs(fit.constant - 2.0) < 0.01


def test_quadratic_growth_is_not_conforming():
    points = [(n, 0, float(n * n)) for n in POWERS]
    fit = fit_constant(points, "n_log_n_plus_d")
    assert not fit.conforming
    assert fit.spread > 3


def test_fit_rejects_degenerate_input():
    with pytest.raises(DegenerateInputError):
        fit_constant([(16, 0, 1.0), (32, 0, 2.0)], "n_plus_d")
    with pytest.raises(DegenerateInputError):
        fit_constant([(1, 0, 1.0), (2, 0, 2.0), (4, 0, 3.0)], "n_log_n_plus_d")
    with pytest.raises(ConfigError):
        fit_constant([(1, 0, 1.0)] * 3, "n_cubed")


def test_group_envelopes_keeps_maximum():
    assert group_envelopes([(4, 0, 3.0), (4, 0, 7.0), (8, 1, 2.0)]) == {(4, 0): 7.0, (8, 1): 2.0}


def test_run_trials_is_reproducible_and_ordered():
    config = ExecutionConfig(n=8, max_slots=10_000)
    first = run_trials(config, 3, seed_base=10, workers=2)
    second = run_trials(config, 3, seed_base=10, workers=1)
    assert [s.seed for s in first] == [10, 11, 12]
    assert first == second
    for summary in first:
        assert summary.error is None
        if summary.terminated:
            assert len(summary.success_slots) == 8


def test_single_trial_matches_run_execution():
    config = ExecutionConfig(n=6, max_slots=10_000)
    (summary,) = run_trials(config, 1, seed_base=7)
    direct = summarize_trace(run_execution(config.model_copy(update={"seed": 7, "record": "aggregate"})))
    assert summary == direct


def test_trial_failures_are_captured():
    (summary,) = run_trials(ExecutionConfig(n=2, protocol="nope"), 1, seed_base=0)
    assert summary.error.startswith("ConfigError")
    with pytest.raises(ConfigError):
        run_trials(ExecutionConfig(n=2), 0, seed_base=0)


def test_sweep_and_csv(tmp_path):
    report = sweep("dynamic2", "none", [4, 8, 16], [0], trials=2, seed_base=1)
    assert len(report.rows) == 6
    assert report.failures == 0
    assert "n_plus_d" in report.fits
    path = tmp_path / "sweep.csv"
    write_sweep_csv(report.rows, path)
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "protocol,adversary,n,d,c,seed,active_slots,max_energy,terminated"
    assert read_sweep_csv(path) == report.rows


def test_sweep_rejects_empty_grid():
    with pytest.raises(ConfigError):
        sweep("dynamic2", "none", [], [0], trials=1)


def _rows(points):
    return [
        SweepRow(
            protocol="dynamic2", adversary="none", n=n, d=0, c=4.0, seed=0,
            active_slots=slots, max_energy=energy, terminated=True,
        )
        for n, slots, energy in points
    ]


def test_each_model_fits_its_own_column():
    rows = _rows([(16, 200, 30), (64, 900, 70), (256, 5000, 130), (1024, 21000, 200)])
    fits = fit_rows(rows)
    energy = fit_constant([(r.n, r.d, float(r.max_energy)) for r in rows], "log2_sq_n_plus_log2_sq_d")
    slots = fit_constant([(r.n, r.d, float(r.active_slots)) for r in rows], "n_log_n_plus_d")
    assert fits["log2_sq_n_plus_log2_sq_d"].metric == "max_energy"
    assert fits["log2_sq_n_plus_log2_sq_d"].constant == pytest.approx(energy.constant)
    assert fits["n_log_n_plus_d"].metric == "active_slots"
    assert fits["n_log_n_plus_d"].constant == pytest.approx(slots.constant)
    assert model_metric("n_plus_d") == "active_slots"


def test_sweep_energy_fit_uses_max_energy():
    report = sweep("dynamic2", "none", [4, 8, 16, 32], [0], trials=2)
    points = [(r.n, r.d, float(r.max_energy)) for r in report.rows if r.terminated]
    fit = report.fits["log2_sq_n_plus_log2_sq_d"]
    assert fit.constant == pytest.approx(fit_constant(points, "log2_sq_n_plus_log2_sq_d").constant)
