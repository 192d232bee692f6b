"""Regional joint maintenance and unit-commitment model.

Assembles one region's decision variables and constraints into a solver-ready
problem: commitment/dispatch limits, min up/down times via start/stop
indicators, ramping, DC flow definition on tie lines, line capacities, nodal
balance with optional load-shed slack, the one-maintenance-window-per-horizon
rule and the preference window, plus the consensus-augmented objective
(signed dual terms by default, absolute-value form via epigraph variables as
an option).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .case import PowerCase, RegionPartition, window_of_hour
from .consensus import ConsensusState
from .errors import IntegralityError, ModelError
from .miqp import MiqpProblem, MiqpSolution, ProblemBuilder

PHASE_RELAXED = "relaxed"
PHASE_BINARY = "binary"


@dataclass
class ModelConfig:
    """Knobs that shape the regional model itself (not the protocol)."""

    slack_penalty: float | None = 1e4  # $/MWh for unserved load; None disables psi
    abs_dual_term: bool = False        # reproduce the |theta - consensus| objective form
    reference_bus: str | None = None   # bus pinned to zero phase angle, if hosted here
    initial_commitment: int = 0        # x at t=0
    initial_dispatch: float = 0.0      # y at t=0


class RegionIndex:
    """Variable layout and index sets for one region's subproblem."""

    def __init__(self, case: PowerCase, part: RegionPartition, region: int):
        self.case = case
        self.part = part
        self.region = region
        self.T = case.horizon
        self.gens = part.generators(region)
        self.dgens = part.degraded(region)
        self.buses = part.all_buses(region)          # I u U u V, sorted
        self.own_buses = part.own_buses(region)      # I u U, balance rows
        self.monitored = part.monitored(region)      # B_r = U u V
        self.ties = part.tie_lines(region)
        self.lines = part.lines_of(region)
        self.n_windows = case.n_windows

        self._bus_pos = {b: i for i, b in enumerate(self.buses)}
        self._mon_pos = {b: i for i, b in enumerate(self.monitored)}
        self._gen_pos = {g.gid: i for i, g in enumerate(self.gens)}
        self._tie_pos = {tl.key: i for i, tl in enumerate(self.ties)}

    def bus_pos(self, bus: str) -> int:
        return self._bus_pos[bus]

    def monitored_pos(self, bus: str) -> int:
        return self._mon_pos[bus]

    def tie_pos(self, key: tuple[str, str]) -> int:
        return self._tie_pos[key]


@dataclass
class RegionalProblem:
    """A built subproblem plus the id grids needed to read solutions back."""

    problem: MiqpProblem
    index: RegionIndex
    phase: str
    config: ModelConfig
    x_ids: np.ndarray        # (nG, T)
    y_ids: np.ndarray
    pu_ids: np.ndarray
    pd_ids: np.ndarray
    z_ids: np.ndarray        # (nDg, M)
    theta_ids: np.ndarray    # (nBuses, T)
    flow_ids: np.ndarray     # (nTies, T)
    psi_ids: np.ndarray | None
    base_lin: np.ndarray = field(repr=False, default=None)
    abs_rows: dict = field(repr=False, default_factory=dict)


@dataclass
class RegionalVariables:
    """Named solution values for one region."""

    index: RegionIndex
    phase: str
    x: np.ndarray
    y: np.ndarray
    pi_up: np.ndarray
    pi_dn: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    flow: np.ndarray
    psi: np.ndarray | None
    solver_objective: float

    def theta_of(self, bus: str) -> np.ndarray:
        return self.theta[self.index.bus_pos(bus)]

    def monitored_theta(self) -> np.ndarray:
        """(|B_r|, T) phase angles of boundary plus foreign buses."""
        rows = [self.index.bus_pos(b) for b in self.index.monitored]
        return self.theta[rows]


def build_subproblem(
    case: PowerCase,
    part: RegionPartition,
    region: int,
    consensus: ConsensusState | None,
    phase: str,
    config: ModelConfig | None = None,
) -> RegionalProblem:
    """Assemble the regional MIQP for the given phase and consensus state.

    With ``consensus=None`` (or an inactive state) the objective carries only
    dispatch, commitment, maintenance and slack cost, which is the form used
    for centralized benchmark solves.
    """
    if phase not in (PHASE_RELAXED, PHASE_BINARY):
        raise ModelError(f"unknown phase {phase!r}")
    cfg = config or ModelConfig()
    idx = RegionIndex(case, part, region)
    T = idx.T
    nG = len(idx.gens)
    nDg = len(idx.dgens)
    M = idx.n_windows
    binary = phase == PHASE_BINARY

    b = ProblemBuilder()

    x_ids = np.zeros((nG, T), dtype=int)
    y_ids = np.zeros((nG, T), dtype=int)
    pu_ids = np.zeros((nG, T), dtype=int)
    pd_ids = np.zeros((nG, T), dtype=int)
    for i, g in enumerate(idx.gens):
        for t in range(T):
            x_ids[i, t] = b.add_variable(
                f"x[{g.gid},{t + 1}]", lb=0.0, ub=1.0,
                lin=g.commitment_cost, integer=binary,
            )
        for t in range(T):
            y_ids[i, t] = b.add_variable(
                f"y[{g.gid},{t + 1}]", lb=0.0, ub=g.p_max, lin=g.dispatch_cost,
            )
        for t in range(T):
            pu_ids[i, t] = b.add_variable(f"pu[{g.gid},{t + 1}]", lb=0.0, ub=1.0)
        for t in range(T):
            pd_ids[i, t] = b.add_variable(f"pd[{g.gid},{t + 1}]", lb=0.0, ub=1.0)

    z_ids = np.zeros((nDg, M), dtype=int)
    for i, gid in enumerate(idx.dgens):
        spec = case.maintenance[gid]
        admissible = set(spec.admissible_windows(M))
        for m in range(1, M + 1):
            ub = 1.0 if m in admissible else 0.0  # preference window enforced by fixing
            z_ids[i, m - 1] = b.add_variable(
                f"z[{gid},{m}]", lb=0.0, ub=ub,
                lin=spec.window_costs[m - 1], integer=binary,
            )

    theta_ids = np.zeros((len(idx.buses), T), dtype=int)
    for i, bus in enumerate(idx.buses):
        fix = cfg.reference_bus is not None and bus == cfg.reference_bus
        for t in range(T):
            theta_ids[i, t] = b.add_variable(
                f"th[{bus},{t + 1}]",
                lb=0.0 if fix else -np.inf,
                ub=0.0 if fix else np.inf,
            )

    flow_ids = np.zeros((len(idx.ties), T), dtype=int)
    for i, tl in enumerate(idx.ties):
        for t in range(T):
            flow_ids[i, t] = b.add_variable(
                f"f[{tl.u},{tl.v},{t + 1}]", lb=-tl.f_max, ub=tl.f_max,
            )

    psi_ids = None
    if cfg.slack_penalty is not None:
        psi_ids = np.zeros((len(idx.own_buses), T), dtype=int)
        for i, bus in enumerate(idx.own_buses):
            for t in range(T):
                psi_ids[i, t] = b.add_variable(
                    f"psi[{bus},{t + 1}]", lb=0.0, ub=np.inf, lin=cfg.slack_penalty,
                )

    # commitment suppressed while under maintenance
    for i, gid in enumerate(idx.dgens):
        gi = idx._gen_pos[gid]
        for t in range(1, T + 1):
            m = window_of_hour(case, t)
            b.add_constraint(
                {x_ids[gi, t - 1]: 1.0, z_ids[i, m - 1]: 1.0}, "<", 1.0,
            )

    for i, g in enumerate(idx.gens):
        for t in range(T):
            # dispatch limits tied to commitment
            b.add_constraint({y_ids[i, t]: 1.0, x_ids[i, t]: -g.p_max}, "<", 0.0)
            b.add_constraint({y_ids[i, t]: 1.0, x_ids[i, t]: -g.p_min}, ">", 0.0)
            # start/stop indicators track commitment changes
            if t == 0:
                b.add_constraint(
                    {x_ids[i, t]: 1.0, pu_ids[i, t]: -1.0}, "<", float(cfg.initial_commitment),
                )
                b.add_constraint(
                    {x_ids[i, t]: 1.0, pd_ids[i, t]: 1.0}, ">", float(cfg.initial_commitment),
                )
            else:
                b.add_constraint(
                    {x_ids[i, t]: 1.0, x_ids[i, t - 1]: -1.0, pu_ids[i, t]: -1.0}, "<", 0.0,
                )
                b.add_constraint(
                    {x_ids[i, t]: 1.0, x_ids[i, t - 1]: -1.0, pd_ids[i, t]: 1.0}, ">", 0.0,
                )
            # ramping
            if t == 0:
                b.add_constraint({y_ids[i, t]: 1.0}, "<", g.ramp + cfg.initial_dispatch)
                b.add_constraint({y_ids[i, t]: 1.0}, ">", cfg.initial_dispatch - g.ramp)
            else:
                b.add_constraint({y_ids[i, t]: 1.0, y_ids[i, t - 1]: -1.0}, "<", g.ramp)
                b.add_constraint({y_ids[i, t]: 1.0, y_ids[i, t - 1]: -1.0}, ">", -g.ramp)
            # minimum up/down windows
            up_lo = max(0, t - g.min_up + 1)
            coeffs = {pu_ids[i, tau]: 1.0 for tau in range(up_lo, t + 1)}
            coeffs[x_ids[i, t]] = -1.0
            b.add_constraint(coeffs, "<", 0.0)
            dn_lo = max(0, t - g.min_down + 1)
            coeffs = {pd_ids[i, tau]: 1.0 for tau in range(dn_lo, t + 1)}
            coeffs[x_ids[i, t]] = 1.0
            b.add_constraint(coeffs, "<", 1.0)

    # DC flow definition on tie lines
    for i, tl in enumerate(idx.ties):
        pu_ = theta_ids[idx.bus_pos(tl.u)]
        pv_ = theta_ids[idx.bus_pos(tl.v)]
        for t in range(T):
            b.add_constraint(
                {pu_[t]: tl.gamma, pv_[t]: -tl.gamma, flow_ids[i, t]: -1.0}, "=", 0.0,
            )

    # line capacity on every internal and tie line
    for ln in idx.lines:
        pu_ = theta_ids[idx.bus_pos(ln.u)]
        pv_ = theta_ids[idx.bus_pos(ln.v)]
        for t in range(T):
            b.add_constraint({pu_[t]: ln.gamma, pv_[t]: -ln.gamma}, "<", ln.f_max)
            b.add_constraint({pu_[t]: ln.gamma, pv_[t]: -ln.gamma}, ">", -ln.f_max)

    # nodal balance: generation - demand + slack = outgoing flow
    gens_at_bus: dict[str, list[int]] = {}
    for i, g in enumerate(idx.gens):
        gens_at_bus.setdefault(g.bus, []).append(i)
    for bi, bus in enumerate(idx.own_buses):
        nbrs = idx.part.bus_neighbors(region, bus)
        adjacent = nbrs["internal"] + nbrs["boundary"] + nbrs["foreign"]
        gamma_of = {}
        for ln in idx.lines:
            if ln.u == bus:
                gamma_of[ln.v] = ln.gamma
            elif ln.v == bus:
                gamma_of[ln.u] = ln.gamma
        for t in range(T):
            coeffs: dict[int, float] = {}
            for gi in gens_at_bus.get(bus, []):
                coeffs[y_ids[gi, t]] = 1.0
            if psi_ids is not None:
                coeffs[psi_ids[bi, t]] = 1.0
            th_b = theta_ids[idx.bus_pos(bus), t]
            for nb in adjacent:
                gam = gamma_of[nb]
                coeffs[th_b] = coeffs.get(th_b, 0.0) - gam
                th_n = theta_ids[idx.bus_pos(nb), t]
                coeffs[th_n] = coeffs.get(th_n, 0.0) + gam
            b.add_constraint(coeffs, "=", float(case.demand[bus][t]))

    # exactly one maintenance window per degraded generator
    for i, gid in enumerate(idx.dgens):
        b.add_constraint({z_ids[i, m]: 1.0 for m in range(M)}, "=", 1.0)

    rp = RegionalProblem(
        problem=None, index=idx, phase=phase, config=cfg,
        x_ids=x_ids, y_ids=y_ids, pu_ids=pu_ids, pd_ids=pd_ids,
        z_ids=z_ids, theta_ids=theta_ids, flow_ids=flow_ids, psi_ids=psi_ids,
    )

    with_consensus = consensus is not None and consensus.active
    if not with_consensus:
        rp.base_lin = np.asarray(b._lin, dtype=float).copy()
        rp._base_const = b.constant
    if with_consensus:
        _add_consensus_terms(b, rp, consensus)

    rp.problem = b.build()
    if not with_consensus:
        # pad the cached base costs in case consensus terms add variables later
        rp.base_lin = rp.problem.lin_cost.copy()
    return rp


def _monitored_theta_ids(rp: RegionalProblem) -> np.ndarray:
    idx = rp.index
    rows = [idx.bus_pos(bus) for bus in idx.monitored]
    return rp.theta_ids[rows]


def _add_consensus_terms(b: ProblemBuilder, rp: RegionalProblem, state: ConsensusState) -> None:
    """Dual and quadratic penalty terms on coupled phase angles and tie flows."""
    idx = rp.index
    cfg = rp.config
    T = idx.T
    mon_ids = _monitored_theta_ids(rp)
    rho_t, rho_f = state.rho_theta, state.rho_f

    if cfg.abs_dual_term and (np.any(state.lam < 0) or np.any(state.phi < 0)):
        raise ModelError("absolute dual form requires nonnegative multipliers")

    abs_theta_rows = []
    abs_flow_rows = []
    for k, bus in enumerate(idx.monitored):
        for t in range(T):
            vid = int(mon_ids[k, t])
            tb = float(state.theta_bar[k, t])
            lam = float(state.lam[k, t])
            b.add_quad(vid, rho_t)
            if cfg.abs_dual_term:
                s = b.add_variable(f"sabs_th[{bus},{t + 1}]", lb=0.0, ub=np.inf, lin=lam)
                abs_theta_rows.append(b.add_constraint({vid: 1.0, s: -1.0}, "<", tb))
                abs_theta_rows.append(b.add_constraint({vid: -1.0, s: -1.0}, "<", -tb))
                b.add_linear(vid, -rho_t * tb)
                b.constant += 0.5 * rho_t * tb * tb
            else:
                b.add_linear(vid, lam - rho_t * tb)
                b.constant += 0.5 * rho_t * tb * tb - lam * tb
    for k, tl in enumerate(idx.ties):
        for t in range(T):
            vid = int(rp.flow_ids[k, t])
            fb = float(state.f_bar[k, t])
            phi = float(state.phi[k, t])
            b.add_quad(vid, rho_f)
            if cfg.abs_dual_term:
                s = b.add_variable(f"sabs_f[{tl.u},{tl.v},{t + 1}]", lb=0.0, ub=np.inf, lin=phi)
                abs_flow_rows.append(b.add_constraint({vid: 1.0, s: -1.0}, "<", fb))
                abs_flow_rows.append(b.add_constraint({vid: -1.0, s: -1.0}, "<", -fb))
                b.add_linear(vid, -rho_f * fb)
                b.constant += 0.5 * rho_f * fb * fb
            else:
                b.add_linear(vid, phi - rho_f * fb)
                b.constant += 0.5 * rho_f * fb * fb - phi * fb
    rp.abs_rows = {"theta": abs_theta_rows, "flow": abs_flow_rows}


def refresh_objective(rp: RegionalProblem, state: ConsensusState) -> None:
    """Update dual/penalty objective data in place for a new iteration.

    Equivalent to rebuilding via :func:`build_subproblem` with the same
    constraints; only linear costs, the constant and (in the absolute-dual
    form) epigraph row bounds change between iterations.
    """
    p = rp.problem
    if rp.base_lin is None:
        # problem was built with consensus terms baked in: recover the base
        _strip = build_subproblem(
            rp.index.case, rp.index.part, rp.index.region, None, rp.phase, rp.config
        )
        nbase = _strip.problem.n_vars
        rp.base_lin = p.lin_cost.copy()
        rp.base_lin[:nbase] = _strip.problem.lin_cost
        rp._base_const = _strip.problem.constant

    if not state.active:
        return
    if rp.config.abs_dual_term and not (rp.abs_rows.get("theta") or rp.abs_rows.get("flow")):
        raise ModelError(
            "absolute dual form lacks epigraph structure; rebuild the subproblem "
            "with the active consensus state instead of refreshing"
        )
    idx = rp.index
    T = idx.T
    lin = rp.base_lin.copy()
    const = rp._base_const
    mon_ids = _monitored_theta_ids(rp)
    rho_t, rho_f = state.rho_theta, state.rho_f
    cfg = rp.config

    # quadratic penalties are constant across iterations; (re)install them
    p.quad_cost[mon_ids.reshape(-1)] = rho_t
    if rp.flow_ids.size:
        p.quad_cost[rp.flow_ids.reshape(-1)] = rho_f

    if cfg.abs_dual_term:
        if np.any(state.lam < 0) or np.any(state.phi < 0):
            raise ModelError("absolute dual form requires nonnegative multipliers")
        n_mon = len(idx.monitored)
        n_tie = len(idx.ties)
        sabs_start = rp.problem.n_vars - (n_mon + n_tie) * T
        k = sabs_start
        rows = rp.abs_rows["theta"]
        ri = 0
        for i in range(n_mon):
            for t in range(T):
                tb = float(state.theta_bar[i, t])
                lin[mon_ids[i, t]] = rp.base_lin[mon_ids[i, t]] - rho_t * tb
                lin[k] = float(state.lam[i, t])
                const += 0.5 * rho_t * tb * tb
                p.rhs[rows[ri]] = tb
                p.rhs[rows[ri + 1]] = -tb
                ri += 2
                k += 1
        rows = rp.abs_rows["flow"]
        ri = 0
        for i in range(n_tie):
            for t in range(T):
                fb = float(state.f_bar[i, t])
                lin[rp.flow_ids[i, t]] = rp.base_lin[rp.flow_ids[i, t]] - rho_f * fb
                lin[k] = float(state.phi[i, t])
                const += 0.5 * rho_f * fb * fb
                p.rhs[rows[ri]] = fb
                p.rhs[rows[ri + 1]] = -fb
                ri += 2
                k += 1
    else:
        mt = mon_ids.reshape(-1)
        lin[mt] += state.lam.reshape(-1) - rho_t * state.theta_bar.reshape(-1)
        const += float(
            np.sum(0.5 * rho_t * state.theta_bar**2 - state.lam * state.theta_bar)
        )
        ft = rp.flow_ids.reshape(-1)
        if ft.size:
            lin[ft] += state.phi.reshape(-1) - rho_f * state.f_bar.reshape(-1)
            const += float(np.sum(0.5 * rho_f * state.f_bar**2 - state.phi * state.f_bar))
    p.lin_cost[:] = lin
    p.constant = const


def extract_solution(rp: RegionalProblem, raw: MiqpSolution) -> RegionalVariables:
    """Map a solver vector back to named regional variables.

    In the binary phase, commitment and maintenance values must sit within
    1e-6 of an integer and are snapped exactly.
    """
    if raw.x is None:
        raise ModelError(f"cannot extract variables from status {raw.status!r}")
    xv = raw.x
    x = xv[rp.x_ids].copy()
    z = xv[rp.z_ids].copy() if rp.z_ids.size else np.zeros(rp.z_ids.shape)
    if rp.phase == PHASE_BINARY:
        for name, arr in (("commitment", x), ("maintenance", z)):
            if arr.size and np.max(np.abs(arr - np.round(arr))) > 1e-6:
                worst = float(np.max(np.abs(arr - np.round(arr))))
                raise IntegralityError(
                    f"{name} values deviate from integrality by {worst:.2e}"
                )
        x = np.round(x)
        z = np.round(z)
    return RegionalVariables(
        index=rp.index,
        phase=rp.phase,
        x=x,
        y=xv[rp.y_ids].copy(),
        pi_up=xv[rp.pu_ids].copy(),
        pi_dn=xv[rp.pd_ids].copy(),
        z=z,
        theta=xv[rp.theta_ids].copy(),
        flow=xv[rp.flow_ids].copy() if rp.flow_ids.size else np.zeros(rp.flow_ids.shape),
        psi=xv[rp.psi_ids].copy() if rp.psi_ids is not None else None,
        solver_objective=raw.objective,
    )


def local_cost(vars_: RegionalVariables) -> float:
    """Dispatch + commitment + maintenance cost, excluding all penalty terms."""
    idx = vars_.index
    total = 0.0
    for i, g in enumerate(idx.gens):
        total += g.dispatch_cost * float(np.sum(vars_.y[i]))
        total += g.commitment_cost * float(np.sum(vars_.x[i]))
    for i, gid in enumerate(idx.dgens):
        costs = np.asarray(idx.case.maintenance[gid].window_costs)
        total += float(costs @ vars_.z[i])
    return total


def balance_residual(vars_: RegionalVariables) -> float:
    """Worst nodal balance violation, recomputed from first principles."""
    idx = vars_.index
    case = idx.case
    worst = 0.0
    gens_at_bus: dict[str, list[int]] = {}
    for i, g in enumerate(idx.gens):
        gens_at_bus.setdefault(g.bus, []).append(i)
    for bi, bus in enumerate(idx.own_buses):
        inj = np.zeros(idx.T)
        for gi in gens_at_bus.get(bus, []):
            inj += vars_.y[gi]
        if vars_.psi is not None:
            inj += vars_.psi[bi]
        inj -= np.asarray(case.demand[bus])
        out = np.zeros(idx.T)
        for ln in idx.lines:
            if ln.u == bus:
                other = ln.v
            elif ln.v == bus:
                other = ln.u
            else:
                continue
            out += ln.gamma * (
                vars_.theta[idx.bus_pos(bus)] - vars_.theta[idx.bus_pos(other)]
            )
        worst = max(worst, float(np.max(np.abs(inj - out))))
    return worst


def constraint_count(idx: RegionIndex, slack: bool = True) -> int:
    """Closed-form row count of the regional model (signed dual form)."""
    T = idx.T
    nG = len(idx.gens)
    nDg = len(idx.dgens)
    return (
        nDg * T            # maintenance suppresses commitment
        + 2 * nG * T       # dispatch limits
        + 2 * nG * T       # start/stop tracking
        + 2 * nG * T       # ramping
        + 2 * nG * T       # min up/down
        + len(idx.ties) * T       # tie flow definition
        + 2 * len(idx.lines) * T  # line capacity
        + len(idx.own_buses) * T  # nodal balance
        + nDg              # one window per degraded generator
    )
