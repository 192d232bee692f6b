"""Experiment drivers: centralized benchmark, gaps, sweeps, CSV emission.

Deterministic outputs (trace.csv, summary.csv) never contain wall-clock
values, so two seeded runs produce byte-identical files; timing statistics
go to the human-readable report instead.
"""

from __future__ import annotations

import io
import json
import statistics
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .case import PowerCase, RegionPartition, load_case, load_partition, partition
from .errors import ConfigError
from .miqp import get_backend, solve_qp
from .protocol import RunConfig, TraceRecord, TwoPhaseResult, run_two_phase
from .regional import ModelConfig, PHASE_BINARY, PHASE_RELAXED, build_subproblem, extract_solution, local_cost


@dataclass
class ExperimentConfig:
    """File-level experiment description (mirrors the CLI flags)."""

    case_path: str = ""
    partition_path: str = ""
    scale: float = 0.015
    epsilon: float = 1.0
    m_alpha: float = 1.0
    cl: float = 0.1
    gamma: int = 4
    lookback: int = 10
    eta_mode: str = "table"
    eta: float | None = None
    rho_theta: float = 1.0
    rho_f: float = 1.0
    seed: int = 0
    budget_s: float = 10_600.0
    max_iterations: int = 2000
    backend: str = "bundled"
    node_limit: int = 50_000
    rel_gap: float = 1e-6
    slack_penalty: float | None = 1e4
    abs_dual_term: bool = False
    reference_bus: str | None = None

    def run_config(self, *, seed: int | None = None, scale: float | None = None,
                   cl: float | None = None, gamma: int | None = None) -> RunConfig:
        return RunConfig(
            scale=self.scale if scale is None else scale,
            epsilon=self.epsilon,
            m_alpha=self.m_alpha,
            cl=self.cl if cl is None else cl,
            gamma=self.gamma if gamma is None else gamma,
            lookback=self.lookback,
            eta_mode=self.eta_mode,
            eta=self.eta,
            rho_theta=self.rho_theta,
            rho_f=self.rho_f,
            seed=self.seed if seed is None else seed,
            budget_s=self.budget_s,
            max_iterations=self.max_iterations,
            backend=self.backend,
            node_limit=self.node_limit,
            rel_gap=self.rel_gap,
            slack_penalty=self.slack_penalty,
            abs_dual_term=self.abs_dual_term,
            reference_bus=self.reference_bus,
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            doc = json.load(fh)
        allowed = {f.name for f in fields(cls)}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown config field(s) {sorted(unknown)} in {path}")
        return cls(**doc)

    def load_inputs(self) -> tuple[PowerCase, RegionPartition]:
        case = load_case(self.case_path)
        part = load_partition(self.partition_path, case)
        return case, part


@dataclass
class CentralizedResult:
    objective: float          # pure cost (gap denominator)
    solver_objective: float
    status: str
    gap: float
    nodes: int
    schedule: object
    wall_s: float


def centralized_solve(
    case: PowerCase,
    *,
    phase: str = PHASE_BINARY,
    backend: str = "bundled",
    node_limit: int = 200_000,
    rel_gap: float = 1e-6,
    reference_bus: str | None = None,
    slack_penalty: float | None = 1e4,
) -> CentralizedResult:
    """Whole-network benchmark solve: one region, no penalties, no noise."""
    t0 = time.perf_counter()
    part = partition(case, {b: 1 for b in case.buses})
    cfg = ModelConfig(
        slack_penalty=slack_penalty,
        reference_bus=reference_bus or min(case.buses),
    )
    rp = build_subproblem(case, part, 1, None, phase, cfg)
    eng = get_backend(backend)
    if phase == PHASE_BINARY:
        sol = eng.solve_miqp(rp.problem, node_limit=node_limit, rel_gap=rel_gap)
    else:
        sol = eng.solve_qp(rp.problem)
    vars_ = extract_solution(rp, sol)
    return CentralizedResult(
        objective=local_cost(vars_),
        solver_objective=sol.objective,
        status=sol.status,
        gap=sol.gap,
        nodes=sol.nodes,
        schedule=vars_,
        wall_s=time.perf_counter() - t0,
    )


NON_CONVERGED_GAP_CAP = 0.16


def optimality_gap(xi_decent: float, xi_cent: float, converged: bool,
                   cap: float = NON_CONVERGED_GAP_CAP) -> float:
    """Relative objective gap; non-converged runs report the cap."""
    if xi_cent <= 0:
        raise ConfigError("centralized objective must be positive for the gap")
    if not converged:
        return cap
    return abs(xi_decent - xi_cent) / xi_cent


def reconciled_cost(
    case: PowerCase,
    schedule: dict,
    *,
    reference_bus: str | None = None,
    slack_penalty: float = 1e4,
) -> tuple[float, float]:
    """True system cost of a decentralized commitment/maintenance schedule.

    Regional solutions agree on coupled quantities only up to the privacy
    noise, so summing their local objectives misprices imports and exports.
    Fixing every region's binary decisions and re-dispatching the whole
    network prices the actual plan; unserved load (shed) is charged at the
    slack penalty so an under-committed plan cannot look cheap.

    Returns ``(cost, shed)`` where shed is total unserved energy.
    """
    part = partition(case, {b: 1 for b in case.buses})
    cfg = ModelConfig(
        slack_penalty=slack_penalty,
        reference_bus=reference_bus or min(case.buses),
    )
    rp = build_subproblem(case, part, 1, None, PHASE_BINARY, cfg)
    lb = rp.problem.lower.copy()
    ub = rp.problem.upper.copy()
    gen_rows = {g.gid: i for i, g in enumerate(rp.index.gens)}
    dgen_rows = {gid: i for i, gid in enumerate(rp.index.dgens)}
    for vars_ in schedule.values():
        for i, g in enumerate(vars_.index.gens):
            row = gen_rows[g.gid]
            vals = np.round(vars_.x[i])
            lb[rp.x_ids[row]] = vals
            ub[rp.x_ids[row]] = vals
        for i, gid in enumerate(vars_.index.dgens):
            row = dgen_rows[gid]
            vals = np.round(vars_.z[i])
            lb[rp.z_ids[row]] = vals
            ub[rp.z_ids[row]] = vals
    res = solve_qp(rp.problem, lb=lb, ub=ub)
    if res.status != "optimal":
        raise ConfigError("fixed decentralized schedule has no feasible dispatch")
    fixed = extract_solution(rp, res)
    shed = float(np.sum(fixed.psi)) if fixed.psi is not None else 0.0
    return local_cost(fixed) + slack_penalty * shed, shed


def flow_noise_norm(true_flows, dp_flows) -> float:
    """2-norm distance between real and privacy-perturbed flow vectors."""
    a = np.asarray(true_flows, dtype=float)
    b = np.asarray(dp_flows, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"flow vectors misaligned: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


@dataclass
class CellResult:
    scale: float
    cl: float
    gamma: int
    seed: int
    converged: bool
    status: str
    phase1_iterations: int
    phase2_iterations: int
    objective_decentralized: float | None
    objective_centralized: float
    gap_raw: float | None
    gap_reported: float
    flow_noise: float | None
    wall_s: float
    error: str = ""


@dataclass
class SweepResult:
    cells: list[CellResult]
    trace: list[tuple]        # (scale, cl, gamma, seed, TraceRecord)
    centralized: CentralizedResult

    def converged_count(self) -> int:
        return sum(1 for c in self.cells if c.converged)


def run_experiment(
    case: PowerCase,
    part: RegionPartition,
    cfg: RunConfig,
    centralized: CentralizedResult | None = None,
    *,
    rel_gap_centralized: float = 1e-4,
) -> tuple[TwoPhaseResult, CellResult]:
    """One decentralized run plus its gap against the centralized benchmark."""
    if centralized is None:
        centralized = centralized_solve(
            case,
            backend=cfg.backend,
            rel_gap=rel_gap_centralized,
            reference_bus=cfg.reference_bus,
            slack_penalty=cfg.slack_penalty,
        )
    result = run_two_phase(case, part, cfg)
    fn = None
    if result.phase2 is not None and result.phase2.dp_flows.size:
        fn = flow_noise_norm(result.phase2.true_flows, result.phase2.dp_flows)
    # price the decentralized plan by re-dispatching its fixed binaries; the
    # raw sum of local objectives misprices noisy tie-line disagreements
    xi_decent = None
    if result.schedule is not None:
        xi_decent, _shed = reconciled_cost(
            case,
            result.schedule,
            reference_bus=cfg.reference_bus,
            slack_penalty=cfg.slack_penalty if cfg.slack_penalty is not None else 1e4,
        )
    gap_raw = (
        None
        if xi_decent is None
        else abs(xi_decent - centralized.objective) / centralized.objective
    )
    cell = CellResult(
        scale=cfg.scale,
        cl=cfg.cl,
        gamma=cfg.gamma,
        seed=cfg.seed,
        converged=result.converged,
        status=(result.phase2.status if result.phase2 else result.phase1.status),
        phase1_iterations=result.phase1.iterations,
        phase2_iterations=result.phase2.iterations if result.phase2 else 0,
        objective_decentralized=xi_decent,
        objective_centralized=centralized.objective,
        gap_raw=gap_raw,
        gap_reported=optimality_gap(
            xi_decent if xi_decent is not None else 0.0,
            centralized.objective,
            result.converged,
        ),
        flow_noise=fn,
        wall_s=result.wall_s,
    )
    return result, cell


def sweep(
    case: PowerCase,
    part: RegionPartition,
    base: RunConfig,
    *,
    scales: list[float] | None = None,
    cls: list[float] | None = None,
    gammas: list[int] | None = None,
    seeds: list[int] | None = None,
    centralized: CentralizedResult | None = None,
    rel_gap_centralized: float = 1e-4,
) -> SweepResult:
    """Grid of runs over (scale, cl, gamma, seed); failures don't stop it."""
    scales = scales or [base.scale]
    cls = cls or [base.cl]
    gammas = gammas or [base.gamma]
    seeds = seeds if seeds is not None else [base.seed]
    if not (scales and cls and gammas and seeds):
        raise ConfigError("sweep grid is empty")
    if centralized is None:
        centralized = centralized_solve(
            case,
            backend=base.backend,
            rel_gap=rel_gap_centralized,
            reference_bus=base.reference_bus,
            slack_penalty=base.slack_penalty,
        )
    cells: list[CellResult] = []
    trace: list[tuple] = []
    for scale in scales:
        for cl in cls:
            for gamma in gammas:
                for seed in seeds:
                    cfg = replace(base, scale=scale, cl=cl, gamma=gamma, seed=seed)
                    try:
                        result, cell = run_experiment(case, part, cfg, centralized)
                        for rec in result.phase1.trace:
                            trace.append((scale, cl, gamma, seed, rec))
                        if result.phase2 is not None:
                            for rec in result.phase2.trace:
                                trace.append((scale, cl, gamma, seed, rec))
                    except Exception as exc:  # cell failures are data, not fatal
                        cell = CellResult(
                            scale=scale, cl=cl, gamma=gamma, seed=seed,
                            converged=False, status="error",
                            phase1_iterations=0, phase2_iterations=0,
                            objective_decentralized=None,
                            objective_centralized=centralized.objective,
                            gap_raw=None,
                            gap_reported=NON_CONVERGED_GAP_CAP,
                            flow_noise=None, wall_s=0.0, error=str(exc),
                        )
                    cells.append(cell)
    return SweepResult(cells=cells, trace=trace, centralized=centralized)


# ---------------------------------------------------------------------------
# CSV / report emission


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


TRACE_COLUMNS = [
    "scale", "cl", "gamma", "seed", "phase", "iteration", "region",
    "local_cost", "solver_objective", "primal_residual", "dual_residual",
    "new_points", "points", "alarms", "kappa", "lambda_l1", "phi_l1",
    "solver_nodes", "converged",
]


def trace_csv(rows: list[tuple]) -> str:
    """Deterministic CSV of per-iteration telemetry (no wall-clock column)."""
    buf = io.StringIO()
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for scale, cl, gamma, seed, rec in rows:
        cells = [
            _fmt(scale), _fmt(cl), _fmt(gamma), _fmt(seed),
            _fmt(rec.phase), _fmt(rec.iteration), _fmt(rec.region),
            _fmt(rec.local_cost), _fmt(rec.solver_objective),
            _fmt(rec.primal_residual), _fmt(rec.dual_residual),
            _fmt(rec.new_points), rec.points, _fmt(rec.alarms), _fmt(rec.kappa),
            _fmt(rec.lambda_l1), _fmt(rec.phi_l1), _fmt(rec.solver_nodes),
            _fmt(rec.converged),
        ]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


SUMMARY_COLUMNS = [
    "scale", "cl", "gamma", "seed", "converged", "status",
    "phase1_iterations", "phase2_iterations",
    "objective_decentralized", "objective_centralized",
    "gap_raw", "gap_reported", "flow_noise", "error",
]


def summary_csv(cells: list[CellResult]) -> str:
    buf = io.StringIO()
    buf.write(",".join(SUMMARY_COLUMNS) + "\n")
    for c in cells:
        buf.write(
            ",".join(
                [
                    _fmt(c.scale), _fmt(c.cl), _fmt(c.gamma), _fmt(c.seed),
                    _fmt(c.converged), c.status,
                    _fmt(c.phase1_iterations), _fmt(c.phase2_iterations),
                    _fmt(c.objective_decentralized), _fmt(c.objective_centralized),
                    _fmt(c.gap_raw), _fmt(c.gap_reported), _fmt(c.flow_noise),
                    c.error.replace(",", ";").replace("\n", " "),
                ]
            )
            + "\n"
        )
    return buf.getvalue()


def report_text(result: SweepResult, base: RunConfig) -> str:
    """Human-readable run report, including timing (non-deterministic)."""
    lines = []
    lines.append("dpgrid experiment report")
    lines.append("=" * 60)
    lines.append(
        f"privacy: flow-noise scale (sensitivity/epsilon) = {base.scale:g}; "
        f"epsilon {base.epsilon:g} implies sensitivity {base.scale * base.epsilon:g} MW; "
        f"noise multiplier m_alpha = {base.m_alpha:g}"
    )
    lines.append(
        f"centralized benchmark: objective {result.centralized.objective:.6f} "
        f"({result.centralized.status}, {result.centralized.nodes} nodes, "
        f"{result.centralized.wall_s:.1f} s)"
    )
    lines.append(
        f"cells: {len(result.cells)} total, {result.converged_count()} converged"
    )
    lines.append("")
    lines.append("per-cell results:")
    for c in result.cells:
        gap = "n/a" if c.gap_raw is None else f"{c.gap_raw:.4%}"
        fn = "n/a" if c.flow_noise is None else f"{c.flow_noise:.4f}"
        lines.append(
            f"  scale={c.scale:g} cl={c.cl:g} gamma={c.gamma} seed={c.seed}: "
            f"{c.status}, iters p1={c.phase1_iterations} p2={c.phase2_iterations}, "
            f"gap={gap} (reported {c.gap_reported:.4%}), flow-noise={fn}, "
            f"wall={c.wall_s:.1f}s"
            + (f", error={c.error}" if c.error else "")
        )
    lines.append("")
    walls = [c.wall_s for c in result.cells]
    if walls:
        mean = statistics.fmean(walls)
        std = statistics.pstdev(walls) if len(walls) > 1 else 0.0
        lines.append(
            f"computational time over all cells incl. non-converged: "
            f"mean {mean:.2f} s, std {std:.2f} s"
        )
    gaps = [c.gap_reported for c in result.cells]
    if gaps:
        lines.append(
            f"optimality gap (reported, non-converged capped at "
            f"{NON_CONVERGED_GAP_CAP:.0%}): median {statistics.median(gaps):.4%}, "
            f"mean {statistics.fmean(gaps):.4%}"
        )
    return "\n".join(lines) + "\n"


def write_outputs(result: SweepResult, base: RunConfig, out_dir) -> dict[str, str]:
    """Write trace.csv, summary.csv and report.txt; returns their paths."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, text in (
        ("trace.csv", trace_csv(result.trace)),
        ("summary.csv", summary_csv(result.cells)),
        ("report.txt", report_text(result, base)),
    ):
        p = os.path.join(out_dir, name)
        with open(p, "w", newline="") as fh:
            fh.write(text)
        paths[name] = p
    return paths
