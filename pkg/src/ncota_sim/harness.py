"""Experiment harness: configured multi-trial runs, metrics, and fits.

A run is defined by an ExperimentConfig (problem source, deployment,
algorithm, stepsize grid or horizon schedule, trials, frames, seed).
Each (grid point, trial) pair owns counter-based random streams keyed by
(seed, grid index, trial, frame, ...), so results are identical no
matter how work is scheduled; the NCOTA_SIM_THREADS environment variable
caps worker threads (0 or unset means auto).

Metrics are recorded on a geometric frame grid: the optimality error
sqrt(mean over trials of (1/N) sum_i ||w_i - w*||^2) and the mean
held-out classification error, both against simulated radio time.
"""

from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import baselines, ncota
from .analysis import check_conditions, horizon_schedule, mixing_matrix
from .channel import DEFAULT_RADIO, Deployment, RadioConstants, build_deployment
from .codec import build_codebook
from .ncota import DivergenceError, Stepsizes, init_states, run_frame
from .problem import ProblemSpec, ingest_dataset, solve_centralized, synthesize_dataset

ALGORITHMS = ("ncota", "od", "oa", "dgd")

_GRID_RATIO = 1.3


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a run, JSON-serializable and flat."""

    algo: str = "ncota"
    n: int = 20
    dim: int = 10
    source: str = "synthetic"        # "synthetic" or "idx"
    idx_images: str | None = None
    idx_labels: str | None = None
    region_radius_m: float = 3000.0
    p_tx_dbm: float = DEFAULT_RADIO.p_tx_dbm
    n0_dbm_hz: float = DEFAULT_RADIO.n0_dbm_hz
    w_tot_hz: float = DEFAULT_RADIO.w_tot_hz
    f_c_hz: float = DEFAULT_RADIO.f_c_hz
    etas: list[float] = field(default_factory=lambda: [0.1])
    gammas: list[float] = field(default_factory=lambda: [0.0])
    schedule_epsilon: float | None = None  # with schedule_a/b, overrides the grid
    schedule_a: float | None = None
    schedule_b: float | None = None
    trials: int = 10
    frames: int = 1000
    seed: int = 0
    test_size: int = 200
    r_min: float = 1.0
    backend: str = "faded"
    rate_target_prob: float = 0.9
    rate_radius_m: float = 500.0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        known = {f for f in ExperimentConfig.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return ExperimentConfig(**doc)


@dataclass(frozen=True)
class TrialRow:
    """One recorded point of one trial."""

    algo: str
    eta: float
    gamma: float
    trial: int
    frame: int
    sim_time_s: float
    opt_error: float
    test_error: float


@dataclass(frozen=True)
class MetricsRow:
    """Trial-averaged metrics at one recorded frame of one grid point."""

    algo: str
    eta: float
    gamma: float
    frame: int
    sim_time_s: float
    opt_error: float      # sqrt of the trial-mean squared node error
    test_error: float
    trials: int           # surviving (non-divergent) trials averaged


@dataclass(frozen=True)
class EnvelopeRow:
    """Best grid point at one recorded frame."""

    frame: int
    sim_time_s: float
    opt_error: float
    test_error: float
    eta: float
    gamma: float


@dataclass
class RunResult:
    """Everything a run produced, ready for reporting."""

    config: ExperimentConfig
    problem: ProblemSpec
    deployment: Deployment
    w_star: np.ndarray
    rows: list[TrialRow]
    aggregates: list[MetricsRow]
    diverged: dict[tuple[float, float, int], int]  # (eta, gamma, trial) -> frame
    frame_duration_s: float
    report: dict


def worker_count(tasks: int) -> int:
    """Resolve NCOTA_SIM_THREADS (0 or unset = auto) against the task count."""
    raw = os.environ.get("NCOTA_SIM_THREADS", "0")
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValueError(f"NCOTA_SIM_THREADS must be an integer, got {raw!r}") from exc
    if cap < 0:
        raise ValueError("NCOTA_SIM_THREADS must be non-negative")
    if cap == 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, tasks))


def sample_frames(k_max: int, ratio: float = _GRID_RATIO) -> list[int]:
    """Geometric recording grid {0, 1, ~1.3^j, ..., k_max}."""
    if k_max < 0:
        raise ValueError("frame count must be non-negative")
    marks = {0, k_max}
    value = 1.0
    while value < k_max:
        marks.add(int(round(value)))
        value *= ratio
    return sorted(marks)


def frame_duration_s(cfg: ExperimentConfig, dep: Deployment, problem,
                     link: baselines.DigitalLinkConfig | None = None) -> float:
    """Simulated seconds consumed by one frame of the configured algorithm."""
    if cfg.algo == "ncota":
        return ncota.frame_duration_s(problem.d, dep.constants.w_tot_hz)
    if cfg.algo == "od":
        if link is None:
            raise ValueError("digital frame duration needs the link config")
        return baselines.od_frame_duration_s(dep.n, problem.d, link, dep.constants.w_tot_hz)
    if cfg.algo == "oa":
        return baselines.oa_frame_duration_s(dep.n, problem.d, dep.constants.w_tot_hz)
    if cfg.algo == "dgd":
        # The noiseless oracle has no radio; count one consensus frame.
        return ncota.frame_duration_s(problem.d, dep.constants.w_tot_hz)
    raise ValueError(f"unknown algorithm {cfg.algo!r}")


def build_problem(cfg: ExperimentConfig) -> ProblemSpec:
    """Materialize the configured dataset."""
    if cfg.source == "synthetic":
        return synthesize_dataset(
            cfg.n, cfg.dim, seed=cfg.seed, test_size=cfg.test_size, r_min=cfg.r_min
        )
    if cfg.source == "idx":
        if not cfg.idx_images or not cfg.idx_labels:
            raise ValueError("idx source needs idx_images and idx_labels paths")
        return ingest_dataset(
            cfg.idx_images, cfg.idx_labels, cfg.n, cfg.dim,
            test_size=cfg.test_size, r_min=cfg.r_min,
        )
    raise ValueError(f"unknown problem source {cfg.source!r}")


def radio_constants(cfg: ExperimentConfig) -> RadioConstants:
    return RadioConstants(
        p_tx_dbm=cfg.p_tx_dbm,
        n0_dbm_hz=cfg.n0_dbm_hz,
        w_tot_hz=cfg.w_tot_hz,
        f_c_hz=cfg.f_c_hz,
    )


def stepsize_grid(cfg: ExperimentConfig) -> list[tuple[float, float]]:
    """Expand the config into (eta, gamma) grid points for the algorithm."""
    if cfg.schedule_a is not None or cfg.schedule_b is not None:
        if cfg.schedule_a is None or cfg.schedule_b is None:
            raise ValueError("schedule needs both schedule_a and schedule_b")
        sched = horizon_schedule(
            cfg.frames, cfg.schedule_epsilon or 0.0, cfg.schedule_a, cfg.schedule_b
        )
        return [(sched.eta, sched.gamma)]
    if cfg.algo == "ncota":
        return list(itertools.product(cfg.etas, cfg.gammas))
    # The baselines have no consensus stepsize; gamma is recorded as 0.
    return [(eta, 0.0) for eta in cfg.etas]


@dataclass
class _Trajectory:
    records: list[tuple[int, float, float]]  # (frame, mean sq error, test error)
    diverged_at: int | None


def _metric(problem, w_star, states) -> tuple[float, float]:
    iterates = np.stack([s.w for s in states])
    msq = float(np.mean(np.sum((iterates - w_star) ** 2, axis=1)))
    test = float(np.mean([problem.classification_error(s.w) for s in states]))
    return msq, test


def run_trajectory(
    algo: str,
    problem,
    dep: Deployment,
    eta: float,
    gamma: float,
    frames: int,
    record: list[int],
    w_star: np.ndarray,
    key: tuple,
    backend: str = "faded",
    link: baselines.DigitalLinkConfig | None = None,
    omega: np.ndarray | None = None,
) -> _Trajectory:
    """Run one trial of one grid point, recording metrics at chosen frames."""
    states = init_states(dep, problem.d)
    recorded = []
    record_set = set(record)
    if 0 in record_set:
        recorded.append((0, *_metric(problem, w_star, states)))
    if algo == "ncota":
        cb = build_codebook(problem.d, problem.radius)
        steps = Stepsizes(gamma=gamma, eta=eta)
    elif algo == "od" and link is None:
        raise ValueError("digital baseline needs a DigitalLinkConfig")
    elif algo == "dgd" and omega is None:
        omega = mixing_matrix(dep).omega
    for k in range(frames):
        try:
            if algo == "ncota":
                states = run_frame(states, dep, problem, steps, cb, backend, (*key, k))
            elif algo == "od":
                states = baselines.od_dgd_frame(states, dep, link, eta, problem, (*key, k))
            elif algo == "oa":
                states = baselines.oa_dgd_frame(states, dep, eta, problem, (*key, k))
            elif algo == "dgd":
                states = baselines.dgd_step_reference(states, omega, eta, problem, problem.radius)
            else:
                raise ValueError(f"unknown algorithm {algo!r}")
        except DivergenceError as err:
            err.frame = k
            return _Trajectory(records=recorded, diverged_at=k)
        if k + 1 in record_set:
            recorded.append((k + 1, *_metric(problem, w_star, states)))
    return _Trajectory(records=recorded, diverged_at=None)


def run_experiment(cfg: ExperimentConfig, record: list[int] | None = None) -> RunResult:
    """Run the full grid x trials experiment described by the config."""
    if cfg.algo not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {cfg.algo!r}; expected one of {ALGORITHMS}")
    problem = build_problem(cfg)
    dep = build_deployment(cfg.n, cfg.region_radius_m, cfg.seed, radio_constants(cfg))
    optimum = solve_centralized(problem)
    record = sorted(set(record)) if record is not None else sample_frames(cfg.frames)

    link = None
    if cfg.algo == "od":
        rate = baselines.choose_rate(dep, cfg.rate_target_prob, cfg.rate_radius_m)
        link = baselines.digital_link_config(dep, rate)
    omega = mixing_matrix(dep).omega if cfg.algo == "dgd" else None
    duration = frame_duration_s(cfg, dep, problem, link)

    grid = stepsize_grid(cfg)
    tasks = [(gi, trial) for gi in range(len(grid)) for trial in range(cfg.trials)]

    def one(task):
        gi, trial = task
        eta, gamma = grid[gi]
        return task, run_trajectory(
            cfg.algo, problem, dep, eta, gamma, cfg.frames, record,
            optimum.w_star, key=(cfg.seed, gi, trial), backend=cfg.backend,
            link=link, omega=omega,
        )

    outcomes: dict[tuple[int, int], _Trajectory] = {}
    workers = worker_count(len(tasks))
    if workers == 1:
        for task in tasks:
            outcomes[task] = one(task)[1]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for task, traj in pool.map(one, tasks):
                outcomes[task] = traj

    rows: list[TrialRow] = []
    aggregates: list[MetricsRow] = []
    diverged: dict[tuple[float, float, int], int] = {}
    for gi, (eta, gamma) in enumerate(grid):
        per_frame: dict[int, list[tuple[float, float]]] = {k: [] for k in record}
        for trial in range(cfg.trials):
            traj = outcomes[(gi, trial)]
            if traj.diverged_at is not None:
                diverged[(eta, gamma, trial)] = traj.diverged_at
                continue
            for frame, msq, test in traj.records:
                rows.append(
                    TrialRow(
                        algo=cfg.algo, eta=eta, gamma=gamma, trial=trial, frame=frame,
                        sim_time_s=frame * duration,
                        opt_error=float(np.sqrt(msq)), test_error=test,
                    )
                )
                per_frame[frame].append((msq, test))
        for frame in record:
            entries = per_frame[frame]
            if not entries:
                continue
            msqs = np.array([e[0] for e in entries])
            tests = np.array([e[1] for e in entries])
            aggregates.append(
                MetricsRow(
                    algo=cfg.algo, eta=eta, gamma=gamma, frame=frame,
                    sim_time_s=frame * duration,
                    opt_error=float(np.sqrt(msqs.mean())),
                    test_error=float(tests.mean()),
                    trials=len(entries),
                )
            )

    report = {
        "algo": cfg.algo,
        "seed": cfg.seed,
        "frames": cfg.frames,
        "trials": cfg.trials,
        "grid": [{"eta": e, "gamma": g} for e, g in grid],
        "frame_duration_s": duration,
        "total_sim_time_s": duration * cfg.frames,
        "lambda_star": dep.lambda_star,
        "noise_to_energy": dep.noise_to_energy,
        "radius": problem.radius,
        "diverged": [
            {"eta": e, "gamma": g, "trial": t, "frame": f}
            for (e, g, t), f in sorted(diverged.items())
        ],
        "final": [
            {
                "eta": row.eta, "gamma": row.gamma,
                "opt_error": row.opt_error, "test_error": row.test_error,
            }
            for row in aggregates
            if row.frame == cfg.frames
        ],
    }
    if link is not None:
        report["link_rate"] = link.rate
        report["payload_bits"] = link.quantizer.payload_bits(problem.d)
    return RunResult(
        config=cfg, problem=problem, deployment=dep, w_star=optimum.w_star,
        rows=rows, aggregates=aggregates, diverged=diverged,
        frame_duration_s=duration, report=report,
    )


def best_envelope(aggregates: list[MetricsRow]) -> list[EnvelopeRow]:
    """Pointwise best grid point at each recorded frame, with the argmin."""
    by_frame: dict[int, list[MetricsRow]] = {}
    for row in aggregates:
        by_frame.setdefault(row.frame, []).append(row)
    envelope = []
    for frame in sorted(by_frame):
        best = min(by_frame[frame], key=lambda row: row.opt_error)
        envelope.append(
            EnvelopeRow(
                frame=frame, sim_time_s=best.sim_time_s,
                opt_error=best.opt_error, test_error=best.test_error,
                eta=best.eta, gamma=best.gamma,
            )
        )
    return envelope


@dataclass(frozen=True)
class FitResult:
    """Least-squares fit of error ~ scale * (K + delta)^slope."""

    slope: float
    delta: float
    scale: float
    degenerate: bool


def fit_scaling(k_values, errors) -> FitResult:
    """Fit log(error) against log(K + delta) with delta >= 0 chosen by profile.

    For each candidate delta the slope and scale are the closed-form
    least-squares solution; delta minimizes the profiled residual. A flat
    or non-positive error sequence is flagged degenerate (slope 0).
    """
    k = np.asarray(k_values, dtype=float)
    err = np.asarray(errors, dtype=float)
    if k.shape != err.shape or k.ndim != 1 or k.size < 3:
        raise ValueError("need matching 1-d arrays with at least 3 points")
    if np.any(err <= 0) or np.any(k < 0):
        raise ValueError("errors must be positive and frame counts non-negative")
    y = np.log(err)
    if float(np.ptp(y)) < 1e-12:
        return FitResult(slope=0.0, delta=0.0, scale=float(np.exp(y.mean())), degenerate=True)

    def solve(delta):
        x = np.log(k + delta)
        design = np.column_stack([x, np.ones_like(x)])
        coef, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        return float(resid @ resid), coef

    upper = 10.0 * float(k.max())
    probe = np.linspace(0.0, upper, 41)
    best_delta = min(probe, key=lambda dv: solve(dv)[0])
    lo = max(0.0, best_delta - upper / 40.0)
    hi = min(upper, best_delta + upper / 40.0)
    result = optimize.minimize_scalar(
        lambda dv: solve(dv)[0], bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-9 * max(1.0, upper)},
    )
    delta = float(result.x)
    _, coef = solve(delta)
    return FitResult(
        slope=float(coef[0]), delta=delta, scale=float(np.exp(coef[1])), degenerate=False
    )


def coarse_tune_schedule(
    problem,
    dep: Deployment,
    consts,
    k_ref: int,
    a_grid=(100.0, 300.0, 900.0),
    b_factors=(0.3, 1.0, 3.0),
    trials: int = 2,
    seed: int = 0,
    backend: str = "faded",
    w_star: np.ndarray | None = None,
) -> tuple[float, float]:
    """Pick horizon-schedule scales (a, b) by a coarse grid at one horizon.

    For each a, the pivot b balances the consensus-noise term
    (proportional to b/sqrt(a)) against the minimizer-offset term
    (proportional to a/b); candidates scale that pivot by b_factors.
    The winner minimizes the final trial-averaged error at k_ref frames;
    stepsize pairs violating the contraction condition are skipped.
    """
    noise_coef = (
        2.0 * float(np.sqrt(2.0)) * problem.radius * problem.d
        * (consts.lambda_star + consts.noise_to_energy) / np.sqrt(problem.mu)
    )
    bias_coef = consts.nabla_max / consts.Z
    if w_star is None:
        w_star = solve_centralized(problem).w_star
    best = None
    for a in a_grid:
        pivot = float(np.sqrt(bias_coef / noise_coef) * a**0.75)
        for factor in b_factors:
            b = pivot * factor
            sched = horizon_schedule(k_ref, 0.0, a, b)
            if not check_conditions(consts, sched.gamma, sched.eta).contraction:
                continue
            final_msq = []
            for trial in range(trials):
                traj = run_trajectory(
                    "ncota", problem, dep, sched.eta, sched.gamma, k_ref, [k_ref],
                    w_star, key=(seed, "tune", a, factor, trial), backend=backend,
                )
                if traj.diverged_at is None and traj.records:
                    final_msq.append(traj.records[-1][1])
            if not final_msq:
                continue
            score = float(np.mean(final_msq))
            if best is None or score < best[0]:
                best = (score, a, b)
    if best is None:
        raise RuntimeError("no admissible (a, b) candidate survived the coarse grid")
    return best[1], best[2]
