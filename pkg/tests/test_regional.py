import itertools

import numpy as np
import pytest

from dpgrid.case import Generator, Line, MaintenanceSpec, partition
from dpgrid.cases import seven_bus
from dpgrid.consensus import ConsensusState
from dpgrid.errors import IntegralityError, ModelError
from dpgrid.miqp import solve_miqp, solve_qp
from dpgrid.regional import (
    ModelConfig,
    balance_residual,
    build_subproblem,
    constraint_count,
    extract_solution,
    local_cost,
    refresh_objective,
)
from tests.conftest import make_case


def single_bus_case(horizon=2, demand=(10.0, 10.0), maintenance=None, window_hours=None):
    return make_case(
        buses=("N1",),
        gens=(
            Generator("G1", "N1", dispatch_cost=2.0, commitment_cost=5.0,
                      p_min=5.0, p_max=20.0, ramp=20.0, min_up=1, min_down=1),
        ),
        demand={"N1": tuple(demand)},
        horizon=horizon,
        window_hours=window_hours or horizon // 2 or 1,
        maintenance=maintenance,
    )


def solve_region(case, phase="binary", cfg=None, consensus=None):
    part = partition(case, {b: 1 for b in case.buses})
    rp = build_subproblem(case, part, 1, consensus, phase, cfg or ModelConfig(slack_penalty=None))
    sol = solve_miqp(rp.problem) if phase == "binary" else solve_qp(rp.problem)
    return rp, sol


def test_single_generator_two_hours_hand_oracle():
    # stay on both hours: 2 * (10 * D + C) = 2 * (20 + 5) = 50
    case = single_bus_case()
    rp, sol = solve_region(case)
    assert sol.status == "optimal"
    vars_ = extract_solution(rp, sol)
    assert np.allclose(vars_.x, 1.0)
    assert np.allclose(vars_.y, 10.0)
    assert local_cost(vars_) == pytest.approx(50.0)

    # enumeration over the four commitment patterns agrees
    best = np.inf
    for bits in itertools.product([0.0, 1.0], repeat=2):
        lo, hi = rp.problem.lower.copy(), rp.problem.upper.copy()
        lo[rp.x_ids[0]] = bits
        hi[rp.x_ids[0]] = bits
        s = solve_qp(rp.problem, lb=lo, ub=hi)
        if s.status == "optimal":
            best = min(best, s.objective)
    assert best == pytest.approx(sol.objective, rel=1e-9)


def test_local_cost_arithmetic():
    # x=1, y=p_min for one hour: D*3 + C*5 = 2*3+5 = 11
    case = make_case(
        buses=("N1",),
        gens=(
            Generator("G1", "N1", dispatch_cost=2.0, commitment_cost=5.0,
                      p_min=3.0, p_max=20.0, ramp=20.0, min_up=1, min_down=1),
        ),
        demand={"N1": (3.0,)},
        horizon=1,
        window_hours=1,
    )
    rp, sol = solve_region(case)
    vars_ = extract_solution(rp, sol)
    assert local_cost(vars_) == pytest.approx(11.0)


def test_all_off_schedule_costs_maintenance_only():
    case = single_bus_case(demand=(0.0, 0.0), maintenance={
        "G1": MaintenanceSpec((1.5, 2.5), preferred_window=1, max_deviation=4),
    }, window_hours=1)
    rp, sol = solve_region(case)
    vars_ = extract_solution(rp, sol)
    assert np.allclose(vars_.x, 0.0)
    assert local_cost(vars_) == pytest.approx(1.5)  # cheapest admissible window


def test_exactly_one_maintenance_window():
    case = make_case(
        buses=("N1",),
        gens=(
            Generator("G1", "N1", dispatch_cost=2.0, commitment_cost=5.0,
                      p_min=5.0, p_max=40.0, ramp=40.0, min_up=1, min_down=1),
            Generator("G2", "N1", dispatch_cost=3.0, commitment_cost=4.0,
                      p_min=5.0, p_max=40.0, ramp=40.0, min_up=1, min_down=1),
        ),
        demand={"N1": tuple(20.0 for _ in range(8))},
        horizon=8,
        window_hours=2,
        maintenance={"G1": MaintenanceSpec((2.0, 1.0, 3.0, 4.0), preferred_window=2)},
    )
    rp, sol = solve_region(case)
    vars_ = extract_solution(rp, sol)
    assert vars_.z.sum() == pytest.approx(1.0)

    # production is forced to zero inside the chosen window
    m = int(np.argmax(vars_.z[0]))
    hours = range(m * 2, m * 2 + 2)
    for t in hours:
        assert vars_.x[0, t] == pytest.approx(0.0)
        assert vars_.y[0, t] == pytest.approx(0.0, abs=1e-7)


def test_preference_window_fixes_inadmissible():
    case = make_case(
        buses=("N1",),
        gens=(
            Generator("G1", "N1", dispatch_cost=2.0, commitment_cost=5.0,
                      p_min=5.0, p_max=40.0, ramp=40.0, min_up=1, min_down=1),
            Generator("G2", "N1", dispatch_cost=3.0, commitment_cost=4.0,
                      p_min=5.0, p_max=40.0, ramp=40.0, min_up=1, min_down=1),
        ),
        demand={"N1": tuple(20.0 for _ in range(12))},
        horizon=12,
        window_hours=2,
        maintenance={"G1": MaintenanceSpec((0.0,) * 6, preferred_window=2, max_deviation=1)},
    )
    part = partition(case, {b: 1 for b in case.buses})
    rp = build_subproblem(case, part, 1, None, "binary", ModelConfig(slack_penalty=None))
    # windows outside [1, 3] are fixed to zero
    for m in range(6):
        ub = rp.problem.upper[rp.z_ids[0, m]]
        assert ub == (1.0 if 1 <= m + 1 <= 3 else 0.0)


def test_relaxed_phase_admits_fractional_binary_rejects():
    case = single_bus_case()
    part = partition(case, {"N1": 1})
    rp = build_subproblem(case, part, 1, None, "relaxed", ModelConfig(slack_penalty=None))
    sol = solve_qp(rp.problem)
    fake = sol.x.copy()
    fake[rp.x_ids[0, 0]] = 0.4
    sol.x = fake
    vars_ = extract_solution(rp, sol)  # relaxed accepts fractional
    assert vars_.x[0, 0] == pytest.approx(0.4)

    rpb = build_subproblem(case, part, 1, None, "binary", ModelConfig(slack_penalty=None))
    solb = solve_miqp(rpb.problem)
    bad = solb.x.copy()
    bad[rpb.x_ids[0, 0]] = 0.4
    solb.x = bad
    with pytest.raises(IntegralityError):
        extract_solution(rpb, solb)


def test_relaxed_lower_bounds_binary():
    case, rmap = seven_bus()
    part = partition(case, {b: 1 for b in case.buses})
    cfg = ModelConfig(reference_bus="A")
    relax = solve_qp(build_subproblem(case, part, 1, None, "relaxed", cfg).problem)
    binary = solve_miqp(build_subproblem(case, part, 1, None, "binary", cfg).problem,
                        rel_gap=1e-6)
    assert relax.objective <= binary.objective + 1e-7 * (1 + abs(binary.objective))


def test_nodal_balance_residual_tiny():
    case, rmap = seven_bus()
    part = partition(case, rmap)
    cfg = ModelConfig(reference_bus="A")
    for region in part.regions:
        mc = ModelConfig(reference_bus="A" if region == 1 else None)
        rp = build_subproblem(case, part, region, None, "relaxed", mc)
        sol = solve_qp(rp.problem)
        vars_ = extract_solution(rp, sol)
        assert balance_residual(vars_) < 1e-9


def test_constraint_count_closed_form():
    case, rmap = seven_bus()
    part = partition(case, rmap)
    for region in part.regions:
        rp = build_subproblem(case, part, region, None, "relaxed", ModelConfig())
        assert rp.problem.n_rows == constraint_count(rp.index)


def test_no_maintenance_reduces_to_unit_commitment():
    # with no degraded generators the model is a plain regional UC:
    # enumerate commitment patterns for two generators over two hours
    case = make_case(
        buses=("N1",),
        gens=(
            Generator("G1", "N1", dispatch_cost=1.0, commitment_cost=3.0,
                      p_min=2.0, p_max=12.0, ramp=12.0, min_up=1, min_down=1),
            Generator("G2", "N1", dispatch_cost=2.0, commitment_cost=1.0,
                      p_min=2.0, p_max=12.0, ramp=12.0, min_up=1, min_down=1),
        ),
        demand={"N1": (14.0, 6.0)},
        horizon=2,
        window_hours=1,
    )
    rp, sol = solve_region(case)
    best = np.inf
    x_ids = np.concatenate([rp.x_ids[0], rp.x_ids[1]])
    for bits in itertools.product([0.0, 1.0], repeat=4):
        lo, hi = rp.problem.lower.copy(), rp.problem.upper.copy()
        lo[x_ids] = bits
        hi[x_ids] = bits
        s = solve_qp(rp.problem, lb=lo, ub=hi)
        if s.status == "optimal":
            best = min(best, s.objective)
    assert sol.objective == pytest.approx(best, rel=1e-9)


def test_consensus_terms_change_objective_only():
    case, rmap = seven_bus()
    part = partition(case, rmap)
    idx_state = ConsensusState(
        buses=part.monitored(1),
        ties=tuple(tl.key for tl in part.tie_lines(1)),
        horizon=case.horizon,
        rho_theta=2.0,
        rho_f=2.0,
    )
    own_theta = np.zeros((len(part.monitored(1)), case.horizon))
    own_flow = np.zeros((len(part.tie_lines(1)), case.horizon))
    recv = {(b, 2): np.full(case.horizon, 0.01) for b in part.monitored(1)}
    implied = {tl.key: np.full(case.horizon, 0.5) for tl in part.tie_lines(1)}
    idx_state.update_from_neighbors(own_theta, own_flow, recv, implied, first=True)

    base = build_subproblem(case, part, 1, None, "relaxed", ModelConfig())
    with_terms = build_subproblem(case, part, 1, idx_state, "relaxed", ModelConfig())
    assert with_terms.problem.n_rows == base.problem.n_rows
    assert with_terms.problem.n_vars == base.problem.n_vars
    assert not np.array_equal(with_terms.problem.lin_cost, base.problem.lin_cost)

    # refresh on the base problem reproduces the built-with-state objective
    refresh_objective(base, idx_state)
    assert np.allclose(base.problem.lin_cost, with_terms.problem.lin_cost)
    assert np.allclose(base.problem.quad_cost, with_terms.problem.quad_cost)
    assert base.problem.constant == pytest.approx(with_terms.problem.constant)


def test_abs_dual_form_epigraph():
    case, rmap = seven_bus()
    part = partition(case, rmap)
    state = ConsensusState(
        buses=part.monitored(1),
        ties=tuple(tl.key for tl in part.tie_lines(1)),
        horizon=case.horizon,
    )
    own_theta = np.zeros((len(part.monitored(1)), case.horizon))
    own_flow = np.zeros((len(part.tie_lines(1)), case.horizon))
    recv = {(b, 2): np.full(case.horizon, 0.05) for b in part.monitored(1)}
    implied = {tl.key: np.zeros(case.horizon) for tl in part.tie_lines(1)}
    state.update_from_neighbors(own_theta, own_flow, recv, implied, first=True)
    state.lam = np.abs(state.lam)  # absolute form needs nonnegative multipliers
    state.phi = np.abs(state.phi)

    cfg = ModelConfig(abs_dual_term=True, reference_bus="A")
    rp = build_subproblem(case, part, 1, state, "relaxed", cfg)
    base = build_subproblem(case, part, 1, None, "relaxed", cfg)
    extra = (len(part.monitored(1)) + len(part.tie_lines(1))) * case.horizon
    assert rp.problem.n_vars == base.problem.n_vars + extra
    sol = solve_qp(rp.problem)
    assert sol.status == "optimal"

    state.lam = state.lam - 10.0
    with pytest.raises(ModelError, match="nonnegative"):
        build_subproblem(case, part, 1, state, "relaxed", cfg)


def test_infeasible_without_slack_is_reported():
    # demand exceeds every generator: only the slack keeps this feasible
    case = single_bus_case(demand=(50.0, 50.0))
    part = partition(case, {"N1": 1})
    rp = build_subproblem(case, part, 1, None, "relaxed", ModelConfig(slack_penalty=None))
    sol = solve_qp(rp.problem)
    assert sol.status == "infeasible"

    rp2 = build_subproblem(case, part, 1, None, "relaxed", ModelConfig(slack_penalty=1e4))
    sol2 = solve_qp(rp2.problem)
    vars_ = extract_solution(rp2, sol2)
    assert sol2.status == "optimal"
    assert float(vars_.psi.max()) > 0  # shed the unserved 30 MW per hour
