"""Command-line front end.

Subcommands:
    deploy    drop nodes on a disc and write the deployment JSON
    run       execute one configured experiment (CSV + report + figure)
    sweep     run a stepsize grid and add the best-stepsize envelope
    analyze   spectrum, constants, conditions and bounds as JSON
    fit       power-law fit of final errors across run horizons

`run` and `sweep` write into --out: config.json, deployment.json,
problem.json, trials.csv, aggregate.csv, report.json and curves.png
(sweep adds envelope.csv and envelope.png). Figures land next to the
delimited data they render.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import reporting
from .analysis import analysis_report
from .channel import RadioConstants, build_deployment, deployment_from_json, deployment_to_json
from .harness import (
    ExperimentConfig,
    best_envelope,
    fit_scaling,
    run_experiment,
)
from .problem import ProblemSpec, synthesize_dataset


def _add_radio_flags(parser):
    parser.add_argument("--p-tx-dbm", type=float, default=5.0, help="transmit power [dBm]")
    parser.add_argument("--n0-dbm-hz", type=float, default=-169.0, help="noise density [dBm/Hz]")
    parser.add_argument("--w-tot", type=float, default=1e6, help="bandwidth [Hz]")
    parser.add_argument("--f-c", type=float, default=3e9, help="carrier frequency [Hz]")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncota-sim",
        description="Simulate decentralized gradient descent over wireless consensus links.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_deploy = sub.add_parser("deploy", help="generate a node deployment JSON")
    p_deploy.add_argument("--n", type=int, required=True, help="number of nodes")
    p_deploy.add_argument("--radius-m", type=float, required=True, help="disc radius [m]")
    p_deploy.add_argument("--seed", type=int, default=0)
    p_deploy.add_argument("--out", required=True, help="output JSON path")
    _add_radio_flags(p_deploy)

    for name, descr in (("run", "run one experiment"), ("sweep", "run a stepsize grid")):
        p = sub.add_parser(name, help=descr)
        p.add_argument("--config", help="ExperimentConfig JSON path (defaults apply otherwise)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--algo", choices=["ncota", "od", "oa", "dgd"], help="override algorithm")
        p.add_argument("--trials", type=int, help="override trial count")
        p.add_argument("--frames", type=int, help="override frame count")

    p_an = sub.add_parser("analyze", help="emit the analysis report JSON")
    p_an.add_argument("--deployment", required=True, help="deployment JSON path")
    p_an.add_argument("--problem", help="problem JSON path (synthesized when omitted)")
    p_an.add_argument("--n", type=int, default=20, help="synthetic nodes (no --problem)")
    p_an.add_argument("--dim", type=int, default=10, help="synthetic dimension (no --problem)")
    p_an.add_argument("--problem-seed", type=int, default=0)
    p_an.add_argument("--eta", type=float, help="learning stepsize for condition checks")
    p_an.add_argument("--gamma", type=float, help="consensus stepsize for condition checks")
    p_an.add_argument("--frames-at", default="100,1000", help="comma list of frame counts for bounds")
    p_an.add_argument("--out", help="output JSON path (stdout when omitted)")

    p_fit = sub.add_parser("fit", help="fit error ~ (K + delta)^slope across horizons")
    p_fit.add_argument("--out", required=True, help="output directory")
    group = p_fit.add_mutually_exclusive_group(required=True)
    group.add_argument("--reports", nargs="+", help="report.json files from runs at different K")
    group.add_argument("--csv", help="two-column CSV (K, error) to fit directly")
    return parser


def _cmd_deploy(args) -> int:
    constants = RadioConstants(
        p_tx_dbm=args.p_tx_dbm, n0_dbm_hz=args.n0_dbm_hz, w_tot_hz=args.w_tot, f_c_hz=args.f_c
    )
    dep = build_deployment(args.n, args.radius_m, args.seed, constants)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(deployment_to_json(dep))
    print(f"wrote {out} (n={dep.n}, lambda_star={dep.lambda_star:.3e})")
    return 0


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    else:
        cfg = ExperimentConfig()
    overrides = {}
    for field_name in ("seed", "algo", "trials", "frames"):
        value = getattr(args, field_name)
        if value is not None:
            overrides[field_name] = value
    return replace(cfg, **overrides)


def _cmd_run(args, sweep: bool) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json())
    (out / "deployment.json").write_text(deployment_to_json(result.deployment))
    (out / "problem.json").write_text(result.problem.to_json())
    reporting.write_trial_csv(out / "trials.csv", result.rows)
    reporting.write_aggregate_csv(out / "aggregate.csv", result.aggregates)
    (out / "report.json").write_text(json.dumps(result.report, indent=2))
    title = f"{cfg.algo}, N={cfg.n}, d={cfg.dim}, seed={cfg.seed}"
    reporting.render_curves(out / "curves.png", result.aggregates, title)
    if sweep:
        envelope = best_envelope(result.aggregates)
        reporting.write_envelope_csv(out / "envelope.csv", envelope)
        reporting.render_envelope(out / "envelope.png", envelope, title)
    finals = [row for row in result.aggregates if row.frame == cfg.frames]
    if finals:
        best = min(finals, key=lambda r: r.opt_error)
        print(
            f"{cfg.algo}: {cfg.frames} frames x {cfg.trials} trials, "
            f"best final error {best.opt_error:.4e} at eta={best.eta:.3g}, gamma={best.gamma:.3g}"
        )
    if result.diverged:
        print(f"warning: {len(result.diverged)} trial(s) diverged and were excluded")
    print(f"outputs in {out}")
    return 0


def _cmd_analyze(args) -> int:
    dep = deployment_from_json(Path(args.deployment).read_text())
    if args.problem:
        problem = ProblemSpec.from_json(Path(args.problem).read_text())
    else:
        problem = synthesize_dataset(args.n, args.dim, seed=args.problem_seed)
    frames = [int(tok) for tok in args.frames_at.split(",") if tok.strip()]
    doc = analysis_report(dep, problem, gamma=args.gamma, eta=args.eta, frames=frames)
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def _cmd_fit(args) -> int:
    if args.csv:
        raw = np.loadtxt(args.csv, delimiter=",", skiprows=1, ndmin=2)
        ks, errs = raw[:, 0], raw[:, 1]
    else:
        ks, errs = [], []
        for path in args.reports:
            doc = json.loads(Path(path).read_text())
            finals = doc.get("final", [])
            if not finals:
                raise ValueError(f"{path} has no final metrics to fit")
            ks.append(float(doc["frames"]))
            errs.append(min(row["opt_error"] for row in finals))
        ks, errs = np.asarray(ks), np.asarray(errs)
    order = np.argsort(ks)
    ks, errs = ks[order], errs[order]
    fit = fit_scaling(ks, errs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "slope": fit.slope,
        "delta": fit.delta,
        "scale": fit.scale,
        "degenerate": fit.degenerate,
        "k": ks.tolist(),
        "error": errs.tolist(),
    }
    (out / "fit.json").write_text(json.dumps(doc, indent=2))
    reporting.render_fit(out / "fit.png", ks, errs, fit, "final error versus horizon")
    print(f"slope {fit.slope:.4f} with offset delta {fit.delta:.2f}; outputs in {out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "deploy":
            return _cmd_deploy(args)
        if args.command == "run":
            return _cmd_run(args, sweep=False)
        if args.command == "sweep":
            return _cmd_run(args, sweep=True)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "fit":
            return _cmd_fit(args)
        parser.error(f"unknown command {args.command!r}")
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
