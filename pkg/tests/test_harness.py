"""Harness: configs, grids, trajectories, experiment runs, envelope, fits."""

import math

import numpy as np
import pytest

from ncota_sim.harness import (
    ExperimentConfig,
    MetricsRow,
    best_envelope,
    build_problem,
    coarse_tune_schedule,
    fit_scaling,
    frame_duration_s,
    run_experiment,
    run_trajectory,
    sample_frames,
    stepsize_grid,
    worker_count,
)
from ncota_sim.analysis import convergence_constants, mixing_matrix
from ncota_sim.baselines import DigitalLinkConfig
from ncota_sim.problem import solve_centralized


# ---------------------------------------------------------------- scaffolding


def test_sample_frames_shape():
    marks = sample_frames(1000)
    assert marks[0] == 0 and marks[-1] == 1000
    assert 1 in marks
    assert marks == sorted(set(marks))
    # geometric grid: logarithmically many marks, each within one ratio step
    assert len(marks) <= 3 + math.ceil(math.log(1000) / math.log(1.3))
    inner = [m for m in marks if 1 <= m < 1000]
    assert all(b <= math.ceil(a * 1.3) for a, b in zip(inner, inner[1:]))
    assert sample_frames(0) == [0]
    assert sample_frames(1) == [0, 1]
    with pytest.raises(ValueError):
        sample_frames(-1)


def test_worker_count(monkeypatch):
    monkeypatch.setenv("NCOTA_SIM_THREADS", "3")
    assert worker_count(10) == 3
    assert worker_count(2) == 2
    monkeypatch.setenv("NCOTA_SIM_THREADS", "0")
    assert worker_count(10) >= 1
    monkeypatch.delenv("NCOTA_SIM_THREADS")
    assert worker_count(1) == 1
    monkeypatch.setenv("NCOTA_SIM_THREADS", "eight")
    with pytest.raises(ValueError):
        worker_count(4)
    monkeypatch.setenv("NCOTA_SIM_THREADS", "-2")
    with pytest.raises(ValueError):
        worker_count(4)


def test_config_json_round_trip():
    cfg = ExperimentConfig(algo="oa", n=7, dim=6, etas=[0.1, 0.2], seed=4)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg
    with pytest.raises(ValueError, match="unknown config fields"):
        ExperimentConfig.from_json('{"algo": "ncota", "warp_drive": true}')


def test_stepsize_grid_product_and_collapse():
    cfg = ExperimentConfig(algo="ncota", etas=[0.1, 0.2], gammas=[1.0, 2.0, 3.0])
    assert len(stepsize_grid(cfg)) == 6
    cfg_od = ExperimentConfig(algo="od", etas=[0.1, 0.2], gammas=[1.0, 2.0, 3.0])
    assert stepsize_grid(cfg_od) == [(0.1, 0.0), (0.2, 0.0)]


def test_stepsize_grid_schedule_override():
    cfg = ExperimentConfig(
        algo="ncota", frames=16, etas=[9.9], gammas=[9.9],
        schedule_a=1.0, schedule_b=2.0, schedule_epsilon=0.0,
    )
    grid = stepsize_grid(cfg)
    assert grid == [(1.0 / 16.0, 2.0 / 8.0)]
    half = ExperimentConfig(algo="ncota", schedule_a=1.0)
    with pytest.raises(ValueError, match="schedule"):
        stepsize_grid(half)


def test_frame_duration_dispatch(small_dep, small_problem):
    d = small_problem.d
    w = small_dep.constants.w_tot_hz
    assert frame_duration_s(
        ExperimentConfig(algo="ncota"), small_dep, small_problem
    ) == pytest.approx(2 * (d + 1) / w)
    assert frame_duration_s(
        ExperimentConfig(algo="dgd"), small_dep, small_problem
    ) == pytest.approx(2 * (d + 1) / w)
    assert frame_duration_s(
        ExperimentConfig(algo="oa"), small_dep, small_problem
    ) == pytest.approx(small_dep.n * (d // 2 + 2) / w)
    link = DigitalLinkConfig(rate=2.0, success_prob=np.zeros((5, 5)), weight_norm=1.0)
    bits = link.quantizer.payload_bits(d)
    assert frame_duration_s(
        ExperimentConfig(algo="od"), small_dep, small_problem, link
    ) == pytest.approx(small_dep.n * math.ceil(bits / 2.0) / w)
    with pytest.raises(ValueError):
        frame_duration_s(ExperimentConfig(algo="od"), small_dep, small_problem)
    with pytest.raises(ValueError):
        frame_duration_s(ExperimentConfig(algo="sgd"), small_dep, small_problem)


def test_build_problem_sources():
    spec = build_problem(ExperimentConfig(n=6, dim=3, seed=1))
    assert spec.n == 6 and spec.d == 3
    with pytest.raises(ValueError, match="idx"):
        build_problem(ExperimentConfig(source="idx"))
    with pytest.raises(ValueError, match="unknown problem source"):
        build_problem(ExperimentConfig(source="csv"))


# ---------------------------------------------------------------- trajectories


def test_dgd_trajectory_error_decreases(small_dep, small_problem):
    opt = solve_centralized(small_problem)
    eta = 1.0 / (small_problem.mu + small_problem.smoothness)
    record = [0, 5, 10, 20, 40, 80]
    traj = run_trajectory(
        "dgd", small_problem, small_dep, eta, 0.0, 80, record, opt.w_star, key=(0, 0, 0)
    )
    assert traj.diverged_at is None
    frames = [r[0] for r in traj.records]
    errors = [r[1] for r in traj.records]
    assert frames == record
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] < 0.05 * errors[0]


def test_ncota_zero_steps_is_flat(small_dep, small_problem):
    opt = solve_centralized(small_problem)
    record = [0, 3, 7]
    traj = run_trajectory(
        "ncota", small_problem, small_dep, 0.0, 0.0, 7, record, opt.w_star,
        key=(1, 0, 0), backend="faded",
    )
    errors = [r[1] for r in traj.records]
    assert errors[0] == errors[1] == errors[2]


def test_trajectory_keyed_reproducibility(small_dep, small_problem):
    opt = solve_centralized(small_problem)
    spec = mixing_matrix(small_dep)
    kwargs = dict(
        record=[8], w_star=opt.w_star, backend="faded",
    )
    a = run_trajectory(
        "ncota", small_problem, small_dep, 1e-3, 0.3 / spec.lambda_star, 8,
        key=(5, 0, 0), **kwargs,
    )
    b = run_trajectory(
        "ncota", small_problem, small_dep, 1e-3, 0.3 / spec.lambda_star, 8,
        key=(5, 0, 0), **kwargs,
    )
    c = run_trajectory(
        "ncota", small_problem, small_dep, 1e-3, 0.3 / spec.lambda_star, 8,
        key=(5, 0, 1), **kwargs,
    )
    assert a.records == b.records
    assert a.records != c.records


class _PoisonedProblem:
    """Duck-typed problem whose gradient is non-finite from the start."""

    d = 2
    radius = 1.0
    n = 5

    def grad_matrix(self, iterates):
        g = np.zeros_like(iterates)
        g[1, 1] = np.inf
        return g

    def classification_error(self, w):
        return float("nan")


def test_trajectory_records_divergence(small_dep):
    traj = run_trajectory(
        "ncota", _PoisonedProblem(), small_dep, 0.1, 0.0, 10, [0, 5, 10],
        np.zeros(2), key=(2, 0, 0), backend="faded",
    )
    assert traj.diverged_at == 0
    assert [r[0] for r in traj.records] == [0]  # only the initial point survives


def test_trajectory_unknown_algo(small_dep, small_problem):
    with pytest.raises(ValueError, match="unknown algorithm"):
        run_trajectory(
            "sgd", small_problem, small_dep, 0.1, 0.0, 2, [0], np.zeros(4), key=(0,)
        )
    with pytest.raises(ValueError, match="DigitalLinkConfig"):
        run_trajectory(
            "od", small_problem, small_dep, 0.1, 0.0, 2, [0], np.zeros(4), key=(0,)
        )


# ---------------------------------------------------------------- experiments


def _tiny_cfg(algo, **kw):
    base = dict(
        algo=algo, n=5, dim=4, region_radius_m=500.0, trials=2, frames=8,
        etas=[1e-3], gammas=[0.0], seed=2,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_experiment_ncota_shape():
    spec_gamma = 0.3 / build_problem(_tiny_cfg("ncota")).radius  # placeholder scale
    cfg = _tiny_cfg("ncota", gammas=[spec_gamma])
    result = run_experiment(cfg)
    marks = sample_frames(8)
    per_point = {row.frame for row in result.aggregates}
    assert per_point == set(marks)
    assert all(row.trials == 2 for row in result.aggregates)
    assert all(row.algo == "ncota" for row in result.rows)
    assert len(result.rows) == 2 * len(marks)
    assert result.report["final"], "final metrics missing from report"
    assert result.report["frame_duration_s"] == pytest.approx(10e-6)
    assert not result.diverged
    # trial rows are per-trial errors; aggregates fold them in square mean
    for frame in marks:
        msqs = [row.opt_error ** 2 for row in result.rows if row.frame == frame]
        agg = [row for row in result.aggregates if row.frame == frame][0]
        assert agg.opt_error == pytest.approx(float(np.sqrt(np.mean(msqs))), rel=1e-12)


def test_run_experiment_od_reports_link():
    result = run_experiment(_tiny_cfg("od"))
    assert result.report["link_rate"] > 0
    assert result.report["payload_bits"] == 64 + math.ceil(4 * math.log2(9))
    assert result.aggregates


def test_run_experiment_oa_and_dgd_run():
    for algo in ("oa", "dgd"):
        result = run_experiment(_tiny_cfg(algo))
        assert result.aggregates
        final = [row for row in result.aggregates if row.frame == 8]
        assert final and np.isfinite(final[0].opt_error)


def test_run_experiment_rejects_unknown_algo():
    with pytest.raises(ValueError, match="unknown algorithm"):
        run_experiment(_tiny_cfg("sgd"))


def test_run_experiment_thread_invariance(monkeypatch):
    cfg = _tiny_cfg("ncota", gammas=[1e7], trials=3)
    monkeypatch.setenv("NCOTA_SIM_THREADS", "1")
    serial = run_experiment(cfg)
    monkeypatch.setenv("NCOTA_SIM_THREADS", "4")
    threaded = run_experiment(cfg)
    assert serial.rows == threaded.rows
    assert serial.aggregates == threaded.aggregates


# ---------------------------------------------------------------- post-processing


def _mk_row(frame, opt_error, eta, gamma=0.0):
    return MetricsRow(
        algo="x", eta=eta, gamma=gamma, frame=frame, sim_time_s=frame * 1e-5,
        opt_error=opt_error, test_error=0.1, trials=3,
    )


def test_best_envelope_takes_pointwise_min():
    rows = [
        _mk_row(0, 1.0, eta=0.1), _mk_row(0, 2.0, eta=0.2),
        _mk_row(5, 0.8, eta=0.1), _mk_row(5, 0.3, eta=0.2),
        _mk_row(9, 0.7, eta=0.1), _mk_row(9, 0.4, eta=0.2),
    ]
    env = best_envelope(rows)
    assert [e.frame for e in env] == [0, 5, 9]
    assert [e.opt_error for e in env] == [1.0, 0.3, 0.4]
    assert [e.eta for e in env] == [0.1, 0.2, 0.2]
    for e in env:
        curve = [r.opt_error for r in rows if r.frame == e.frame]
        assert e.opt_error <= min(curve)


def test_fit_scaling_recovers_power_law():
    ks = np.array([2**j for j in range(6, 15)])
    errs = 3.0 * (ks + 100.0) ** -0.25
    fit = fit_scaling(ks, errs)
    assert not fit.degenerate
    assert fit.slope == pytest.approx(-0.25, abs=1e-6)
    assert fit.delta == pytest.approx(100.0, rel=1e-2)
    assert fit.scale == pytest.approx(3.0, rel=1e-3)


def test_fit_scaling_flat_is_degenerate():
    fit = fit_scaling([10, 100, 1000], [0.5, 0.5, 0.5])
    assert fit.degenerate
    assert fit.slope == 0.0
    assert fit.scale == pytest.approx(0.5)


def test_fit_scaling_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_scaling([1, 2], [0.1, 0.2])
    with pytest.raises(ValueError):
        fit_scaling([1, 2, 3], [0.1, -0.2, 0.3])
    with pytest.raises(ValueError):
        fit_scaling([1, 2, 3], [0.1, 0.2])


def test_coarse_tune_single_candidate(small_dep, small_problem):
    spectrum = mixing_matrix(small_dep)
    opt = solve_centralized(small_problem)
    consts = convergence_constants(spectrum, opt, small_problem, small_dep)
    a, b = coarse_tune_schedule(
        small_problem, small_dep, consts, k_ref=16,
        a_grid=(100.0,), b_factors=(1.0,), trials=1, seed=0, w_star=opt.w_star,
    )
    assert a == 100.0
    noise_coef = (
        2.0 * math.sqrt(2.0) * small_problem.radius * small_problem.d
        * (consts.lambda_star + consts.noise_to_energy) / math.sqrt(small_problem.mu)
    )
    pivot = math.sqrt((consts.nabla_max / consts.Z) / noise_coef) * 100.0**0.75
    assert b == pytest.approx(pivot, rel=1e-12)
