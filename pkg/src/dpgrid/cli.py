"""Command-line front end: run, sweep, centralized, verify-dp, report.

Exit code 0 means every requested run completed (converged or not);
nonzero signals an execution error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
from scipy import stats

from .bench import (
    ExperimentConfig,
    centralized_solve,
    report_text,
    summary_csv,
    sweep,
    trace_csv,
    write_outputs,
)
from .errors import DpgridError
from .privacy import verify_dp_ratio
from .regional import PHASE_BINARY, PHASE_RELAXED


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--case", help="case file path")
    p.add_argument("--partition", help="partition file path")
    p.add_argument("--config", help="JSON experiment config (flags override it)")
    p.add_argument("--scale", type=float, help="flow-space noise scale")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--m-alpha", type=float, dest="m_alpha", choices=(0.0, 1.0, 2.0))
    p.add_argument("--cl", type=float, help="convergence limit parameter")
    p.add_argument("--gamma", type=int)
    p.add_argument("--lookback", type=int, help="chart window size")
    p.add_argument("--eta-mode", dest="eta_mode", choices=("table", "formula", "explicit"))
    p.add_argument("--eta", type=float)
    p.add_argument("--rho-theta", type=float, dest="rho_theta")
    p.add_argument("--rho-f", type=float, dest="rho_f")
    p.add_argument("--seed", type=int)
    p.add_argument("--budget", type=float, dest="budget_s", help="wall-clock limit, seconds")
    p.add_argument("--max-iterations", type=int, dest="max_iterations")
    p.add_argument("--backend", help="solver backend name")
    p.add_argument("--rel-gap", type=float, dest="rel_gap")
    p.add_argument("--node-limit", type=int, dest="node_limit")
    p.add_argument("--out", default=".", help="output directory")


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {
        "case_path": args.case,
        "partition_path": args.partition,
        "scale": args.scale,
        "epsilon": args.epsilon,
        "m_alpha": args.m_alpha,
        "cl": args.cl,
        "gamma": args.gamma,
        "lookback": args.lookback,
        "eta_mode": args.eta_mode,
        "eta": args.eta,
        "rho_theta": args.rho_theta,
        "rho_f": args.rho_f,
        "seed": args.seed,
        "budget_s": args.budget_s,
        "max_iterations": args.max_iterations,
        "backend": args.backend,
        "rel_gap": args.rel_gap,
        "node_limit": args.node_limit,
    }
    values = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(cfg, **values)


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    case, part = cfg.load_inputs()
    base = cfg.run_config()
    result = sweep(case, part, base)
    paths = write_outputs(result, base, args.out)
    cell = result.cells[0]
    print(
        f"run {cell.status}: gap={cell.gap_reported:.4%} "
        f"iters p1={cell.phase1_iterations} p2={cell.phase2_iterations}"
    )
    print("wrote " + ", ".join(sorted(paths.values())))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _build_config(args)
    case, part = cfg.load_inputs()
    base = cfg.run_config()
    result = sweep(
        case,
        part,
        base,
        scales=_parse_floats(args.scales) if args.scales else None,
        cls=_parse_floats(args.cls) if args.cls else None,
        gammas=_parse_ints(args.gammas) if args.gammas else None,
        seeds=_parse_ints(args.seeds) if args.seeds else None,
    )
    paths = write_outputs(result, base, args.out)
    print(
        f"sweep finished: {len(result.cells)} cells, "
        f"{result.converged_count()} converged"
    )
    print("wrote " + ", ".join(sorted(paths.values())))
    return 0


def _cmd_centralized(args) -> int:
    cfg = _build_config(args)
    case, _ = cfg.load_inputs() if cfg.partition_path else (None, None)
    if case is None:
        from .case import load_case

        case = load_case(cfg.case_path)
    phase = PHASE_RELAXED if args.relaxed else PHASE_BINARY
    res = centralized_solve(
        case,
        phase=phase,
        backend=cfg.backend,
        rel_gap=cfg.rel_gap,
        node_limit=cfg.node_limit,
        reference_bus=cfg.reference_bus,
        slack_penalty=cfg.slack_penalty,
    )
    print(
        f"centralized {phase}: status={res.status} objective={res.objective:.6f} "
        f"(solver objective {res.solver_objective:.6f}, {res.nodes} nodes, "
        f"{res.wall_s:.1f} s)"
    )
    return 0


def _cmd_verify_dp(args) -> int:
    rng = np.random.default_rng(args.seed)
    scale = args.scale
    epsilon = args.epsilon
    sensitivity = scale * epsilon
    print("differential-privacy self-check")
    print(f"  flow-space scale = {scale:g} (sensitivity {sensitivity:g}, epsilon {epsilon:g})")

    # distribution check: flow noise should follow a centered Laplace law
    n = args.samples
    gamma = 8.0
    line_scale = sensitivity / (gamma * epsilon)
    alpha_u = rng.exponential(line_scale, n)
    alpha_v = rng.exponential(line_scale, n)
    noise = gamma * (alpha_u - alpha_v)
    ks = stats.kstest(noise, stats.laplace(loc=0.0, scale=scale).cdf)
    verdict = "PASS" if ks.pvalue > 0.01 else "FAIL"
    print(
        f"  flow-noise distribution: KS statistic {ks.statistic:.5f}, "
        f"p-value {ks.pvalue:.4f} -> {verdict}"
    )

    report = verify_dp_ratio(scale, sensitivity, epsilon, n, rng=rng)
    print(f"  density-ratio bound: {report.summary()}")
    return 0


def _cmd_report(args) -> int:
    with open(args.summary) as fh:
        lines = fh.read().strip().splitlines()
    header = lines[0].split(",")
    print(f"report over {len(lines) - 1} summary rows")
    gap_idx = header.index("gap_reported")
    conv_idx = header.index("converged")
    gaps, conv = [], 0
    for line in lines[1:]:
        cells = line.split(",")
        gaps.append(float(cells[gap_idx]))
        conv += cells[conv_idx] == "1"
    if gaps:
        gaps.sort()
        median = gaps[len(gaps) // 2]
        print(f"  converged: {conv}/{len(gaps)}")
        print(f"  gap (reported): median {median:.4%}, mean {sum(gaps)/len(gaps):.4%}")
    if args.out:
        with open(os.path.join(args.out, "report.txt"), "w") as fh:
            fh.write(f"rows: {len(gaps)}\nconverged: {conv}\n")
            if gaps:
                fh.write(f"median gap: {median:.6f}\nmean gap: {sum(gaps)/len(gaps):.6f}\n")
        print(f"wrote {os.path.join(args.out, 'report.txt')}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dpgrid",
        description="Decentralized, privacy-preserving maintenance and commitment planning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="one two-phase decentralized run")
    _add_experiment_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid of runs over scale/cl/gamma/seed")
    _add_experiment_flags(p_sweep)
    p_sweep.add_argument("--scales", help="comma-separated noise scales")
    p_sweep.add_argument("--cls", help="comma-separated convergence limits")
    p_sweep.add_argument("--gammas", help="comma-separated gamma values")
    p_sweep.add_argument("--seeds", help="comma-separated seeds")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cent = sub.add_parser("centralized", help="whole-network benchmark solve")
    _add_experiment_flags(p_cent)
    p_cent.add_argument("--relaxed", action="store_true", help="solve the relaxation")
    p_cent.set_defaults(func=_cmd_centralized)

    p_dp = sub.add_parser("verify-dp", help="statistical privacy self-checks")
    p_dp.add_argument("--scale", type=float, default=0.015)
    p_dp.add_argument("--epsilon", type=float, default=1.0)
    p_dp.add_argument("--samples", type=int, default=200_000)
    p_dp.add_argument("--seed", type=int, default=0)
    p_dp.set_defaults(func=_cmd_verify_dp)

    p_rep = sub.add_parser("report", help="re-render a report from summary.csv")
    p_rep.add_argument("--summary", required=True)
    p_rep.add_argument("--out", default=None)
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DpgridError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
