"""Lockstep multi-region protocol: solve, perturb, exchange, update.

One worker per region executes, in lockstep per iteration: local MIQP solve,
perturbation of its coupled phase angles, neighbor-only message exchange
through the router, EWMA/consensus/dual updates, chart bookkeeping and (at
decision-block boundaries) the local convergence verdict.  Workers run
round-robin in a single process, which makes seeded runs bit-reproducible;
every message is delivered after all sends of the iteration, mirroring a
synchronous barrier.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .case import PowerCase, RegionPartition
from .chart import ChartConfig, ChartState, local_convergence
from .consensus import ConsensusState, mixing_factor
from .errors import ConfigError, ProtocolError, SolverError
from .miqp import STATUS_INFEASIBLE, STATUS_NODE_LIMIT, STATUS_TIME_LIMIT, get_backend
from .privacy import NoisyAngleMessage, PrivacyConfig, noisy_flow, perturb_angles
from .regional import (
    PHASE_BINARY,
    PHASE_RELAXED,
    ModelConfig,
    RegionalVariables,
    build_subproblem,
    extract_solution,
    local_cost,
    refresh_objective,
)


@dataclass
class RunConfig:
    """All experiment knobs for a decentralized run."""

    scale: float = 0.015              # flow-space noise scale (sensitivity/epsilon)
    epsilon: float = 1.0
    m_alpha: float = 1.0              # 0 turns noise off
    cl: float = 0.1                   # convergence limit parameter
    gamma: int = 4                    # tuning index: points per decision block
    lookback: int = 10                # chart window S_w
    points_per_block: int | None = None  # overrides gamma when set
    eta_mode: str = "table"           # 'table' | 'formula' | 'explicit'
    eta: float | None = None
    rho_theta: float = 1.0
    rho_f: float = 1.0
    chart_limit: float = 1.0
    chart_mode: str = "mean"
    max_alarms_per_block: int = 1
    seed: int = 0
    budget_s: float = 10_600.0        # wall-clock limit across both phases
    max_iterations: int = 2000        # per phase
    backend: str = "bundled"
    node_limit: int = 50_000
    rel_gap: float = 1e-6
    slack_penalty: float | None = 1e4
    abs_dual_term: bool = False
    reference_bus: str | None = None  # default: lowest bus id

    def resolve_eta(self) -> float:
        if self.eta_mode == "explicit":
            if self.eta is None:
                raise ConfigError("eta_mode='explicit' requires an eta value")
            return self.eta
        if self.m_alpha == 0:
            return 1.0  # no noise, nothing to smooth
        if self.eta_mode in ("table", "formula"):
            return mixing_factor(self.scale, self.gamma, mode=self.eta_mode)
        raise ConfigError(f"unknown eta mode {self.eta_mode!r}")

    @property
    def s_p(self) -> int:
        return self.points_per_block if self.points_per_block is not None else self.gamma


@dataclass
class TraceRecord:
    """One row of per-iteration experiment telemetry."""

    phase: int
    iteration: int
    region: int
    local_cost: float
    solver_objective: float
    primal_residual: float
    dual_residual: float
    new_points: int
    points: str
    alarms: int
    kappa: int
    lambda_l1: float
    phi_l1: float
    solver_nodes: int
    converged: bool
    wall_s: float = 0.0  # kept out of deterministic CSV output


class Router:
    """Neighbor-only, exactly-once, barrier-delivered message passing."""

    def __init__(self, part: RegionPartition, tap=None):
        self.neighbors = {r: set(part.neighbors(r)) for r in part.regions}
        self._pending: list[tuple[int, int, NoisyAngleMessage]] = []
        self._iteration: int | None = None
        self._sent: set[tuple[int, int]] = set()
        self.tap = tap

    def begin_iteration(self, k: int) -> None:
        if self._pending:
            raise ProtocolError("previous iteration has undelivered messages")
        self._iteration = k
        self._sent.clear()

    def send(self, sender: int, receiver: int, message: NoisyAngleMessage) -> None:
        if self._iteration is None:
            raise ProtocolError("send outside an iteration")
        if receiver == sender:
            raise ProtocolError(f"region {sender} attempted a self-message")
        if receiver not in self.neighbors.get(sender, ()):
            raise ProtocolError(
                f"region {sender} attempted to message non-neighbor region {receiver}"
            )
        key = (sender, receiver)
        if key in self._sent:
            raise ProtocolError(
                f"duplicate message from region {sender} to {receiver} in one iteration"
            )
        self._sent.add(key)
        self._pending.append((sender, receiver, message))

    def deliver(self) -> dict[int, dict[int, NoisyAngleMessage]]:
        """Hand out all buffered messages at the iteration barrier."""
        if self.tap is not None:
            for item in self._pending:
                self.tap(*item)
        out: dict[int, dict[int, NoisyAngleMessage]] = {}
        for sender, receiver, msg in self._pending:
            out.setdefault(receiver, {})[sender] = msg
        self._pending.clear()
        self._iteration = None
        return out


class RegionWorker:
    """Owns one region's model, consensus state, chart and noise stream."""

    def __init__(
        self,
        case: PowerCase,
        part: RegionPartition,
        region: int,
        phase: str,
        cfg: RunConfig,
        rng: np.random.Generator,
        consensus: ConsensusState | None = None,
        incumbent: np.ndarray | None = None,
    ):
        self.region = region
        self.part = part
        self.cfg = cfg
        self.phase = phase
        self.rng = rng
        ref = cfg.reference_bus or min(case.buses)
        self._hosts_reference = part.region_of(ref) == region
        model_cfg = ModelConfig(
            slack_penalty=cfg.slack_penalty,
            abs_dual_term=cfg.abs_dual_term,
            reference_bus=ref if self._hosts_reference else None,
        )
        self.rp = build_subproblem(case, part, region, None, phase, model_cfg)
        idx = self.rp.index
        self.privacy = PrivacyConfig.for_ties(
            idx.ties, flow_scale=cfg.scale, epsilon=cfg.epsilon, m_alpha=cfg.m_alpha
        )
        if consensus is not None:
            self.consensus = consensus
        else:
            self.consensus = ConsensusState(
                buses=idx.monitored,
                ties=tuple(tl.key for tl in idx.ties),
                horizon=idx.T,
                rho_theta=cfg.rho_theta,
                rho_f=cfg.rho_f,
                eta=cfg.resolve_eta(),
            )
        chart_scale = max(self.privacy.bus_scales.values(), default=cfg.scale)
        self.chart = ChartState(
            ChartConfig(
                window=cfg.lookback,
                points_per_block=cfg.s_p,
                noise_scale=chart_scale,
                limit_multiplier=cfg.chart_limit,
                cl=cfg.cl,
                mode=cfg.chart_mode,
                max_alarms_per_block=cfg.max_alarms_per_block,
                m_alpha=cfg.m_alpha,
            ),
            buses=idx.monitored,
        )
        self.backend = get_backend(cfg.backend)
        self.incumbent = incumbent
        self.vars: RegionalVariables | None = None
        self.sent_theta: dict[str, np.ndarray] = {}
        self.last_received: dict[int, NoisyAngleMessage] = {}
        self.last_dp_flow: np.ndarray | None = None
        self.local_converged = False
        self.primal = float("inf")
        self.dual = float("inf")
        self.solver_nodes = 0

    # -- per-iteration steps, driven by run_phase ---------------------------

    def solve(self, k: int) -> RegionalVariables:
        if self.cfg.abs_dual_term and self.consensus.active:
            # epigraph rows depend on consensus values: rebuild instead of refresh
            self.rp = build_subproblem(
                self.rp.index.case, self.part, self.region,
                self.consensus, self.phase, self.rp.config,
            )
        else:
            refresh_objective(self.rp, self.consensus)
        if self.phase == PHASE_BINARY:
            sol = self.backend.solve_miqp(
                self.rp.problem,
                node_limit=self.cfg.node_limit,
                rel_gap=self.cfg.rel_gap,
                incumbent_start=self.incumbent,
            )
            if sol.x is None and sol.status in (STATUS_NODE_LIMIT, STATUS_TIME_LIMIT):
                # tight per-iteration budget without an incumbent yet: widen once
                sol = self.backend.solve_miqp(
                    self.rp.problem,
                    node_limit=max(500, 20 * self.cfg.node_limit),
                    rel_gap=self.cfg.rel_gap,
                    incumbent_start=self.incumbent,
                )
        else:
            sol = self.backend.solve_qp(self.rp.problem)
        if sol.status == STATUS_INFEASIBLE:
            raise SolverError(
                f"region {self.region} subproblem infeasible at iteration {k}"
            )
        if sol.x is None:
            raise SolverError(
                f"region {self.region} solver returned no point at iteration {k} "
                f"(status {sol.status})"
            )
        self.vars = extract_solution(self.rp, sol)
        self.solver_nodes = sol.nodes
        if self.phase == PHASE_BINARY:
            self.incumbent = sol.x.copy()
        self._align_reference_level()
        return self.vars

    def _align_reference_level(self) -> None:
        """Shift this region's phase-angle level onto the consensus.

        DC flow only sees angle differences, so a region without the global
        reference bus carries a free uniform-shift mode that would otherwise
        drift with the noise and stall the chart.  Re-centering against the
        consensus memory uses no extra communication and changes no flow.
        """
        if self._hosts_reference or not self.consensus.active:
            return
        idx = self.rp.index
        if not idx.monitored:
            return
        own = self.vars.monitored_theta()
        shift = float(np.mean(self.consensus.theta_bar - own))
        if shift != 0.0:
            self.vars.theta += shift

    def outgoing(self, k: int) -> dict[int, NoisyAngleMessage]:
        """Perturb all coupled angles once, then slice one message per neighbor."""
        idx = self.rp.index
        values = {
            bus: self.vars.theta_of(bus) for bus in idx.monitored
        }
        full = perturb_angles(values, self.privacy, self.rng, k, sender=self.region)
        self.sent_theta = dict(full.values)
        out = {}
        for nb in self.part.neighbors(self.region):
            shared = self.part.shared_buses(self.region, nb)
            out[nb] = NoisyAngleMessage(
                sender=self.region,
                iteration=k,
                values={bb: full.values[bb].copy() for bb in shared},
            )
        return out

    def integrate(self, k: int, inbox: dict[int, NoisyAngleMessage]) -> list:
        """Consume neighbor messages: EWMA, consensus, duals, chart, residuals."""
        idx = self.rp.index
        expected = {nb: self.part.shared_buses(self.region, nb) for nb in self.part.neighbors(self.region)}
        received_theta: dict[tuple[str, int], np.ndarray] = {}
        for nb, buses in expected.items():
            msg = inbox.get(nb)
            if msg is None:
                raise ProtocolError(
                    f"region {self.region} missing message from neighbor {nb} at iteration {k}"
                )
            for bus in buses:
                if bus not in msg.values:
                    raise ProtocolError(
                        f"message {nb}->{self.region} lacks bus {bus} at iteration {k}"
                    )
                received_theta[(bus, nb)] = msg.values[bus]
        self.last_received = inbox

        implied = {}
        dp_flows = np.zeros_like(self.vars.flow)
        for i, tl in enumerate(idx.ties):
            est = noisy_flow(
                received_theta[(tl.u, tl.neighbor)],
                received_theta[(tl.v, tl.neighbor)],
                tl.gamma,
            )
            implied[tl.key] = est
            dp_flows[i] = est
        self.last_dp_flow = dp_flows

        own_theta = self.vars.monitored_theta()
        self.consensus.update_from_neighbors(
            own_theta, self.vars.flow, received_theta, implied, first=False
        )
        self.primal, self.dual = self.consensus.residuals(own_theta)

        discrepancies = {}
        for bus in idx.monitored:
            own_hat = self.sent_theta[bus]
            diffs = [
                own_hat - received_theta[(bus, nb)]
                for nb in self.part.neighbors(self.region)
                if (bus, nb) in received_theta
            ]
            discrepancies[bus] = float(np.mean([np.mean(d) for d in diffs])) if diffs else 0.0
        return self.chart.record_iteration(discrepancies)

    def check_convergence(self, k: int) -> bool:
        block = self.chart.config.block_iterations
        if k % block != 0:
            self.local_converged = False
            return False
        idx = self.rp.index
        self.local_converged = local_convergence(
            self.chart, self.primal, self.dual, len(idx.monitored), idx.T
        )
        return self.local_converged


@dataclass
class PhaseResult:
    phase: str
    status: str                       # 'converged' | 'iteration-limit' | 'budget-exhausted'
    iterations: int
    converged_iteration: int | None
    objective: float                  # sum of regional pure costs
    region_vars: dict[int, RegionalVariables]
    consensus: dict[int, ConsensusState]
    trace: list[TraceRecord]
    flow_keys: list[tuple[int, str, str, int]]
    true_flows: np.ndarray
    dp_flows: np.ndarray
    wall_s: float


@dataclass
class TwoPhaseResult:
    phase1: PhaseResult
    phase2: PhaseResult | None
    converged: bool
    objective: float | None
    wall_s: float

    @property
    def schedule(self) -> dict[int, RegionalVariables] | None:
        return self.phase2.region_vars if self.phase2 is not None else None


def _collect_flows(workers: dict[int, RegionWorker]):
    keys = []
    true_vals = []
    dp_vals = []
    for r in sorted(workers):
        w = workers[r]
        idx = w.rp.index
        for i, tl in enumerate(idx.ties):
            for t in range(idx.T):
                keys.append((r, tl.u, tl.v, t + 1))
                true_vals.append(float(w.vars.flow[i, t]))
                dp_vals.append(
                    float(w.last_dp_flow[i, t]) if w.last_dp_flow is not None else float("nan")
                )
    return keys, np.asarray(true_vals), np.asarray(dp_vals)


def run_phase(
    case: PowerCase,
    part: RegionPartition,
    phase: str,
    cfg: RunConfig,
    *,
    rngs: dict[int, np.random.Generator] | None = None,
    consensus: dict[int, ConsensusState] | None = None,
    incumbents: dict[int, np.ndarray] | None = None,
    budget_s: float | None = None,
    trace_offset_phase: int | None = None,
    tap=None,
) -> PhaseResult:
    """Iterate the synchronous protocol until every region certifies locally.

    Returns the final decisions, duals and the full per-iteration trace.  On
    iteration or wall-clock exhaustion the best-so-far state is returned with
    a non-converged status.
    """
    t_start = time.perf_counter()
    budget = budget_s if budget_s is not None else cfg.budget_s
    if rngs is None:
        seq = np.random.SeedSequence(cfg.seed)
        children = seq.spawn(len(part.regions))
        rngs = {r: np.random.default_rng(children[i]) for i, r in enumerate(part.regions)}

    workers = {
        r: RegionWorker(
            case, part, r, phase, cfg, rngs[r],
            consensus=None if consensus is None else consensus.get(r),
            incumbent=None if incumbents is None else incumbents.get(r),
        )
        for r in part.regions
    }
    router = Router(part, tap=tap)
    trace: list[TraceRecord] = []
    phase_no = trace_offset_phase if trace_offset_phase is not None else (1 if phase == PHASE_RELAXED else 2)

    status = "iteration-limit"
    converged_iteration = None
    k = 0
    while k < cfg.max_iterations:
        if time.perf_counter() - t_start > budget:
            status = "budget-exhausted"
            break
        k += 1
        iter_t0 = time.perf_counter()
        for r in sorted(workers):
            workers[r].solve(k)
        router.begin_iteration(k)
        for r in sorted(workers):
            for nb, msg in workers[r].outgoing(k).items():
                router.send(r, nb, msg)
        delivered = router.deliver()
        emitted: dict[int, list] = {}
        for r in sorted(workers):
            emitted[r] = workers[r].integrate(k, delivered.get(r, {}))
        all_converged = True
        for r in sorted(workers):
            all_converged &= workers[r].check_convergence(k)
        wall = time.perf_counter() - iter_t0
        for r in sorted(workers):
            w = workers[r]
            pts = emitted[r]
            trace.append(
                TraceRecord(
                    phase=phase_no,
                    iteration=k,
                    region=r,
                    local_cost=local_cost(w.vars),
                    solver_objective=w.vars.solver_objective,
                    primal_residual=w.primal if np.isfinite(w.primal) else -1.0,
                    dual_residual=w.dual if np.isfinite(w.dual) else -1.0,
                    new_points=len(pts),
                    points="|".join(f"{b}:{v:.10g}" for b, v, _ in pts),
                    alarms=sum(1 for _, _, a in pts if a),
                    kappa=w.chart.last_block_kappa if w.chart.last_block_kappa is not None else -1,
                    lambda_l1=float(np.sum(np.abs(w.consensus.lam))),
                    phi_l1=float(np.sum(np.abs(w.consensus.phi))),
                    solver_nodes=w.solver_nodes,
                    converged=w.local_converged,
                    wall_s=wall,
                )
            )
        if all_converged:
            status = "converged"
            converged_iteration = k
            break

    keys, true_flows, dp_flows = _collect_flows(workers)
    objective = sum(local_cost(workers[r].vars) for r in workers)
    return PhaseResult(
        phase=phase,
        status=status,
        iterations=k,
        converged_iteration=converged_iteration,
        objective=objective,
        region_vars={r: workers[r].vars for r in workers},
        consensus={r: workers[r].consensus for r in workers},
        trace=trace,
        flow_keys=keys,
        true_flows=true_flows,
        dp_flows=dp_flows,
        wall_s=time.perf_counter() - t_start,
    )


def run_two_phase(
    case: PowerCase,
    part: RegionPartition,
    cfg: RunConfig,
    *,
    tap=None,
) -> TwoPhaseResult:
    """Relaxed phase to consensus, then the binary phase warm-started from it.

    Phase 2 inherits phase-1 multipliers, consensus values and EWMA memories,
    and each region's branch-and-bound starts from the rounded phase-1
    commitment/maintenance values.  One wall-clock budget covers both phases.
    """
    t0 = time.perf_counter()
    seq = np.random.SeedSequence(cfg.seed)
    children = seq.spawn(2 * len(part.regions))
    rngs1 = {r: np.random.default_rng(children[i]) for i, r in enumerate(part.regions)}
    rngs2 = {
        r: np.random.default_rng(children[len(part.regions) + i])
        for i, r in enumerate(part.regions)
    }

    p1 = run_phase(case, part, PHASE_RELAXED, cfg, rngs=rngs1, budget_s=cfg.budget_s, tap=tap)

    remaining = cfg.budget_s - (time.perf_counter() - t0)
    if remaining <= 0:
        return TwoPhaseResult(p1, None, False, None, time.perf_counter() - t0)

    incumbents = {}
    for r, vars_ in p1.region_vars.items():
        # rounded relaxed binaries become the branch-and-bound starting point
        incumbents[r] = np.round(
            np.concatenate([vars_.x.reshape(-1), vars_.z.reshape(-1)])
        )
    p2 = run_phase(
        case,
        part,
        PHASE_BINARY,
        cfg,
        rngs=rngs2,
        consensus=p1.consensus,
        incumbents=incumbents,
        budget_s=remaining,
        tap=tap,
    )
    converged = p1.status == "converged" and p2.status == "converged"
    return TwoPhaseResult(
        p1, p2, converged, p2.objective, time.perf_counter() - t0
    )
