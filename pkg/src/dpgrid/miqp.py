"""Mixed-integer convex QP solver.

The canonical problem is a diagonal nonnegative quadratic plus linear
objective over sparse linear rows (<=, =, >=), variable bounds and binary
integrality marks.  `solve_qp` handles the continuous relaxation through a
sparse interior-point method; `solve_miqp` wraps it in a deterministic
best-bound branch-and-bound.  External solvers can be plugged in through the
backend registry without touching any caller.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from . import _ipm
from .errors import ConfigError, SolverError

FEAS_TOL = 1e-7
INT_TOL = 1e-6

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_NODE_LIMIT = "node-limit"
STATUS_TIME_LIMIT = "time-limit"


@dataclass
class MiqpProblem:
    """Solver-facing canonical form."""

    lin_cost: np.ndarray
    quad_cost: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    is_integer: np.ndarray
    a_matrix: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    names: list[str] | None = None
    row_names: list[str] | None = None
    constant: float = 0.0

    @property
    def n_vars(self) -> int:
        return int(self.lin_cost.shape[0])

    @property
    def n_rows(self) -> int:
        return int(self.rhs.shape[0])

    def validate(self) -> None:
        n = self.n_vars
        for name, arr in (
            ("quad_cost", self.quad_cost),
            ("lower", self.lower),
            ("upper", self.upper),
            ("is_integer", self.is_integer),
        ):
            if arr.shape != (n,):
                raise ConfigError(f"{name} has shape {arr.shape}, expected ({n},)")
        if np.any(self.quad_cost < 0):
            bad = int(np.argmin(self.quad_cost))
            raise ConfigError(f"negative quadratic cost on variable {self._vname(bad)}")
        if np.any(self.lower > self.upper + 1e-12):
            bad = int(np.argmax(self.lower - self.upper))
            raise ConfigError(f"lower > upper for variable {self._vname(bad)}")
        mask = self.is_integer.astype(bool)
        if np.any(~np.isfinite(self.lower[mask])) or np.any(~np.isfinite(self.upper[mask])):
            raise ConfigError("integer-marked variables must have finite bounds")
        if self.a_matrix.shape != (self.n_rows, n):
            raise ConfigError("constraint matrix shape mismatch")
        bad_sense = set(self.senses.tolist()) - {"<", "=", ">"}
        if bad_sense:
            raise ConfigError(f"unknown constraint senses {sorted(bad_sense)}")

    def _vname(self, idx: int) -> str:
        if self.names and idx < len(self.names):
            return self.names[idx]
        return f"x{idx}"


@dataclass
class MiqpSolution:
    status: str
    x: np.ndarray | None
    objective: float
    best_bound: float
    gap: float
    kkt_residual: float
    infeasibility_certificate: bool = False
    nodes: int = 0
    message: str = ""

    @property
    def is_optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


class ProblemBuilder:
    """Incremental construction of a MiqpProblem."""

    def __init__(self) -> None:
        self._lin: list[float] = []
        self._quad: list[float] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._int: list[bool] = []
        self._names: list[str] = []
        self._rows_i: list[int] = []
        self._rows_j: list[int] = []
        self._rows_v: list[float] = []
        self._senses: list[str] = []
        self._rhs: list[float] = []
        self._row_names: list[str] = []
        self.constant = 0.0

    @property
    def n_vars(self) -> int:
        return len(self._lin)

    @property
    def n_rows(self) -> int:
        return len(self._rhs)

    def add_variable(
        self,
        name: str,
        *,
        lb: float = 0.0,
        ub: float = np.inf,
        lin: float = 0.0,
        quad: float = 0.0,
        integer: bool = False,
    ) -> int:
        idx = len(self._lin)
        self._lin.append(float(lin))
        self._quad.append(float(quad))
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._int.append(bool(integer))
        self._names.append(name)
        return idx

    def add_linear(self, idx: int, delta: float) -> None:
        self._lin[idx] += float(delta)

    def add_quad(self, idx: int, delta: float) -> None:
        self._quad[idx] += float(delta)

    def add_constraint(self, coeffs: dict[int, float], sense: str, rhs: float, name: str = "") -> int:
        if sense not in ("<", "=", ">"):
            raise ConfigError(f"bad constraint sense {sense!r}")
        row = len(self._rhs)
        for j, v in coeffs.items():
            if v != 0.0:
                self._rows_i.append(row)
                self._rows_j.append(j)
                self._rows_v.append(float(v))
        self._senses.append(sense)
        self._rhs.append(float(rhs))
        self._row_names.append(name)
        return row

    def build(self) -> MiqpProblem:
        n = self.n_vars
        a = sp.coo_matrix(
            (self._rows_v, (self._rows_i, self._rows_j)), shape=(self.n_rows, n)
        ).tocsr()
        problem = MiqpProblem(
            lin_cost=np.asarray(self._lin, dtype=float),
            quad_cost=np.asarray(self._quad, dtype=float),
            lower=np.asarray(self._lb, dtype=float),
            upper=np.asarray(self._ub, dtype=float),
            is_integer=np.asarray(self._int, dtype=bool),
            a_matrix=a,
            senses=np.asarray(self._senses, dtype="<U1"),
            rhs=np.asarray(self._rhs, dtype=float),
            names=list(self._names),
            row_names=list(self._row_names),
            constant=self.constant,
        )
        problem.validate()
        return problem


# ---------------------------------------------------------------------------
# presolve


@dataclass
class _Reduced:
    status: str  # 'ok' | 'infeasible' | 'solved'
    x_full: np.ndarray | None = None
    keep: np.ndarray | None = None
    fixed_values: np.ndarray | None = None
    a_eq: sp.csr_matrix | None = None
    b_eq: np.ndarray | None = None
    a_ub: sp.csr_matrix | None = None
    b_ub: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    q: np.ndarray | None = None
    c: np.ndarray | None = None
    const: float = 0.0


def _static_data(problem: MiqpProblem):
    """Sign-split matrix and row data reused across branch-and-bound nodes."""
    cache = getattr(problem, "_static_cache", None)
    if cache is None:
        a = problem.a_matrix
        cache = {
            "apos": a.maximum(0).tocsr(),
            "aneg": a.minimum(0).tocsr(),
            "row_nnz": np.diff(a.indptr),
        }
        object.__setattr__(problem, "_static_cache", cache)
    return cache


def _presolve(problem: MiqpProblem, lb: np.ndarray, ub: np.ndarray) -> _Reduced:
    n = problem.n_vars
    lb = lb.copy()
    ub = ub.copy()
    if np.any(lb > ub + 1e-9):
        return _Reduced("infeasible")

    a = problem.a_matrix
    senses = problem.senses
    rhs = problem.rhs
    static = _static_data(problem)
    apos, aneg, row_nnz = static["apos"], static["aneg"], static["row_nnz"]

    # bound-tightening from singleton rows, repeated until stable
    for _ in range(3):
        changed = False
        for r in np.where(row_nnz == 1)[0]:
            j = a.indices[a.indptr[r]]
            v = a.data[a.indptr[r]]
            bound = rhs[r] / v
            sense = senses[r]
            if sense == "=":
                new_lo, new_hi = bound, bound
            elif (sense == "<") == (v > 0):
                new_lo, new_hi = -np.inf, bound
            else:
                new_lo, new_hi = bound, np.inf
            if new_lo > lb[j] + 1e-12:
                lb[j] = new_lo
                changed = True
            if new_hi < ub[j] - 1e-12:
                ub[j] = new_hi
                changed = True
        if not changed:
            break
    if np.any(lb > ub + 1e-9):
        return _Reduced("infeasible")

    # interval-arithmetic feasibility check on every row
    lo_act = apos @ np.where(np.isfinite(lb), lb, 0.0) + aneg @ np.where(np.isfinite(ub), ub, 0.0)
    hi_act = apos @ np.where(np.isfinite(ub), ub, 0.0) + aneg @ np.where(np.isfinite(lb), lb, 0.0)
    unb_lo = (apos @ (~np.isfinite(lb)).astype(float) + (-aneg) @ (~np.isfinite(ub)).astype(float)) > 0
    unb_hi = (apos @ (~np.isfinite(ub)).astype(float) + (-aneg) @ (~np.isfinite(lb)).astype(float)) > 0
    lo_act = np.where(unb_lo, -np.inf, lo_act)
    hi_act = np.where(unb_hi, np.inf, hi_act)
    tol_row = 1e-9 * (1.0 + np.abs(rhs))
    bad = ((senses == "<") & (lo_act > rhs + tol_row)) | (
        (senses == ">") & (hi_act < rhs - tol_row)
    ) | ((senses == "=") & ((lo_act > rhs + tol_row) | (hi_act < rhs - tol_row)))
    if np.any(bad):
        return _Reduced("infeasible")

    fixed = (ub - lb) <= 1e-9
    keep = ~fixed
    xf = np.zeros(n)
    xf[fixed] = 0.5 * (lb[fixed] + ub[fixed])

    const = problem.constant
    if np.any(fixed):
        const += float(problem.lin_cost[fixed] @ xf[fixed])
        const += float(0.5 * (problem.quad_cost[fixed] * xf[fixed]) @ xf[fixed])
        rhs_adj = rhs - a[:, fixed] @ xf[fixed]
    else:
        rhs_adj = rhs.copy()

    a_red = a[:, keep] if np.any(fixed) else a
    nk = int(np.count_nonzero(keep))
    if nk == 0:
        # everything fixed, just check the rows
        viol_lt = (senses == "<") & (rhs_adj < -FEAS_TOL * (1.0 + np.abs(rhs)))
        viol_gt = (senses == ">") & (rhs_adj > FEAS_TOL * (1.0 + np.abs(rhs)))
        viol_eq = (senses == "=") & (np.abs(rhs_adj) > FEAS_TOL * (1.0 + np.abs(rhs)))
        if np.any(viol_lt | viol_gt | viol_eq):
            return _Reduced("infeasible")
        return _Reduced("solved", x_full=xf, const=const)

    eq_mask = senses == "="
    lt_mask = senses == "<"
    gt_mask = senses == ">"
    a_eq = a_red[eq_mask].tocsr() if np.any(eq_mask) else None
    b_eq = rhs_adj[eq_mask] if np.any(eq_mask) else None
    parts = []
    rhs_parts = []
    if np.any(lt_mask):
        parts.append(a_red[lt_mask])
        rhs_parts.append(rhs_adj[lt_mask])
    if np.any(gt_mask):
        parts.append(-a_red[gt_mask])
        rhs_parts.append(-rhs_adj[gt_mask])
    a_ub = sp.vstack(parts, format="csr") if parts else None
    b_ub = np.concatenate(rhs_parts) if rhs_parts else None

    # drop empty rows produced by fixing
    if a_ub is not None:
        nnz = np.diff(a_ub.indptr)
        if np.any((nnz == 0) & (b_ub < -FEAS_TOL)):
            return _Reduced("infeasible")
        live = nnz > 0
        a_ub, b_ub = a_ub[live], b_ub[live]
        if a_ub.shape[0] == 0:
            a_ub, b_ub = None, None
    if a_eq is not None:
        nnz = np.diff(a_eq.indptr)
        if np.any((nnz == 0) & (np.abs(b_eq) > FEAS_TOL * (1 + np.abs(b_eq)))):
            return _Reduced("infeasible")
        live = nnz > 0
        a_eq, b_eq = a_eq[live], b_eq[live]
        if a_eq.shape[0] == 0:
            a_eq, b_eq = None, None

    return _Reduced(
        "ok",
        keep=keep,
        fixed_values=xf,
        a_eq=a_eq,
        b_eq=b_eq,
        a_ub=a_ub,
        b_ub=b_ub,
        lb=lb[keep],
        ub=ub[keep],
        q=problem.quad_cost[keep],
        c=problem.lin_cost[keep],
        const=const,
    )


def _scale_rows(a: sp.csr_matrix | None, b: np.ndarray | None):
    if a is None:
        return None, None
    a = a.tocsr(copy=True)
    m = a.shape[0]
    norms = np.ones(m)
    nonempty = np.diff(a.indptr) > 0
    if a.nnz:
        norms[nonempty] = np.maximum.reduceat(np.abs(a.data), a.indptr[:-1][nonempty])
    norms = np.maximum(norms, 1e-8)
    scale = np.repeat(1.0 / norms, np.diff(a.indptr))
    a.data = a.data * scale
    return a, b / norms


def _bounds_list(red: _Reduced) -> list[tuple]:
    return [
        (
            red.lb[j] if np.isfinite(red.lb[j]) else None,
            red.ub[j] if np.isfinite(red.ub[j]) else None,
        )
        for j in range(red.c.shape[0])
    ]


def _feasibility_lp(red: _Reduced) -> str:
    """Arbitrate feasibility of the reduced constraint set with HiGHS."""
    res = linprog(
        np.zeros(red.c.shape[0]),
        A_ub=red.a_ub,
        b_ub=red.b_ub,
        A_eq=red.a_eq,
        b_eq=red.b_eq,
        bounds=_bounds_list(red),
        method="highs",
    )
    if res.status == 2:
        return "infeasible"
    if res.status == 0:
        return "feasible"
    return "unknown"


def _solve_reduced_lp(red: _Reduced) -> tuple[str, np.ndarray | None]:
    """Purely linear objective: a simplex solve handles degenerate corners."""
    res = linprog(
        red.c,
        A_ub=red.a_ub,
        b_ub=red.b_ub,
        A_eq=red.a_eq,
        b_eq=red.b_eq,
        bounds=_bounds_list(red),
        method="highs",
    )
    if res.status == 2:
        return STATUS_INFEASIBLE, None
    if res.status == 0:
        return STATUS_OPTIMAL, res.x
    if res.status == 3:
        raise SolverError("linear subproblem is unbounded below")
    raise SolverError(f"LP solve failed with status {res.status}: {res.message}")


def _kkt_residual_original(problem: MiqpProblem, x: np.ndarray) -> float:
    """Primal feasibility residual, scaled by bound/rhs magnitudes."""
    res = 0.0
    lo_scale = 1.0 + np.abs(np.where(np.isfinite(problem.lower), problem.lower, 0.0))
    hi_scale = 1.0 + np.abs(np.where(np.isfinite(problem.upper), problem.upper, 0.0))
    res = max(res, float(np.max((problem.lower - x) / lo_scale, initial=0.0)))
    res = max(res, float(np.max((x - problem.upper) / hi_scale, initial=0.0)))
    if problem.n_rows:
        act = problem.a_matrix @ x
        scale = 1.0 + np.abs(problem.rhs)
        viol = (act - problem.rhs) / scale
        lt = problem.senses == "<"
        gt = problem.senses == ">"
        eq = problem.senses == "="
        if np.any(lt):
            res = max(res, float(np.max(viol[lt], initial=0.0)))
        if np.any(gt):
            res = max(res, float(np.max(-viol[gt], initial=0.0)))
        if np.any(eq):
            res = max(res, float(np.max(np.abs(viol[eq]), initial=0.0)))
    return res


def _objective(problem: MiqpProblem, x: np.ndarray) -> float:
    return float(0.5 * x @ (problem.quad_cost * x) + problem.lin_cost @ x + problem.constant)


def _feasibility_repair(
    problem: MiqpProblem, x: np.ndarray, lb: np.ndarray, ub: np.ndarray
) -> np.ndarray:
    """Minimum-norm Newton projection onto slightly violated rows.

    Interior-point solutions can carry primal residuals a shade above the
    feasibility tolerance; a couple of tiny least-squares corrections push
    them under it without a measurable objective change.
    """
    a = problem.a_matrix
    senses = problem.senses
    rhs = problem.rhs
    n = problem.n_vars
    eq_rows = senses == "="
    lo_ref = np.abs(np.where(np.isfinite(lb), lb, 0.0))
    hi_ref = np.abs(np.where(np.isfinite(ub), ub, 0.0))
    x = np.clip(x, lb, ub)
    for _ in range(4):
        act = a @ x
        scale = 1.0 + np.abs(rhs)
        viol = (act - rhs) / scale
        over_in = ((senses == "<") & (viol > 0.1 * FEAS_TOL)) | (
            (senses == ">") & (viol < -0.1 * FEAS_TOL)
        )
        eq_bad = eq_rows & (np.abs(viol) > 0.1 * FEAS_TOL)
        lo_bad = np.where(lb - x > 0.1 * FEAS_TOL * (1.0 + lo_ref))[0]
        hi_bad = np.where(x - ub > 0.1 * FEAS_TOL * (1.0 + hi_ref))[0]
        if not np.any(over_in) and not np.any(eq_bad) and lo_bad.size == 0 and hi_bad.size == 0:
            break
        # project onto every equality row (nearly satisfied already) plus the
        # violated inequalities and bounds, so the correction stays consistent
        blocks = []
        resid_parts = []
        keep_rows = eq_rows | over_in
        if np.any(keep_rows):
            blocks.append(a[keep_rows])
            resid_parts.append(rhs[keep_rows] - act[keep_rows])
        for idx_arr, target in ((lo_bad, lb), (hi_bad, ub)):
            if idx_arr.size:
                rows = sp.csr_matrix(
                    (np.ones(idx_arr.size), (np.arange(idx_arr.size), idx_arr)),
                    shape=(idx_arr.size, n),
                )
                blocks.append(rows)
                resid_parts.append(target[idx_arr] - x[idx_arr])
        a_v = sp.vstack(blocks, format="csr")
        resid = np.concatenate(resid_parts)
        # freeze variables sitting on a bound: corrections flow through the
        # remaining columns instead of bouncing off the box
        tolb = 1e-9
        movable = ~(
            (np.isfinite(lb) & (x - lb <= tolb * (1.0 + lo_ref)))
            | (np.isfinite(ub) & (ub - x <= tolb * (1.0 + hi_ref)))
        )
        movable[lo_bad] = True
        movable[hi_bad] = True
        a_v = a_v @ sp.diags(movable.astype(float))
        gram = (a_v @ a_v.T).toarray() + 1e-10 * np.eye(a_v.shape[0])
        try:
            y = np.linalg.solve(gram, resid)
        except np.linalg.LinAlgError:
            break
        x = np.clip(x + a_v.T @ y, lb, ub)
    return x


def solve_qp(
    problem: MiqpProblem,
    *,
    lb: np.ndarray | None = None,
    ub: np.ndarray | None = None,
    tol: float = 1e-9,
) -> MiqpSolution:
    """Solve the continuous relaxation (integrality marks ignored).

    Returns an optimal point with KKT residuals within tolerance, or an
    infeasible status carrying a certificate flag.  Raises SolverError on
    unrecoverable numerical failure.
    """
    problem.validate()
    lb = problem.lower if lb is None else lb
    ub = problem.upper if ub is None else ub

    red = _presolve(problem, lb, ub)
    if red.status == "infeasible":
        return MiqpSolution(
            STATUS_INFEASIBLE, None, np.inf, np.inf, np.inf, np.inf,
            infeasibility_certificate=True, message="presolve certificate",
        )
    if red.status == "solved":
        kkt = _kkt_residual_original(problem, red.x_full)
        if kkt > FEAS_TOL:
            return MiqpSolution(
                STATUS_INFEASIBLE, None, np.inf, np.inf, np.inf, kkt,
                infeasibility_certificate=True, message="fixed point violates rows",
            )
        return MiqpSolution(STATUS_OPTIMAL, red.x_full, red.const, red.const, 0.0, kkt)

    if not np.any(red.q):
        status, x_red = _solve_reduced_lp(red)
        if status == STATUS_INFEASIBLE:
            return MiqpSolution(
                STATUS_INFEASIBLE, None, np.inf, np.inf, np.inf, np.inf,
                infeasibility_certificate=True, message="LP certificate",
            )
    else:
        result = _ipm.solve_ipm(
            red.q, red.c, red.a_eq, red.b_eq, red.a_ub, red.b_ub, red.lb, red.ub, tol=tol
        )
        if result.status != "optimal":
            verdict = _feasibility_lp(red)
            if verdict == "infeasible":
                return MiqpSolution(
                    STATUS_INFEASIBLE, None, np.inf, np.inf, np.inf, np.inf,
                    infeasibility_certificate=True, message="LP certificate",
                )
            # retry ladder: equilibrated rows plus growing proximal bumps break
            # degenerate geometry; polish/repair below restore exactness
            a_eq, b_eq = _scale_rows(red.a_eq, red.b_eq)
            a_ub, b_ub = _scale_rows(red.a_ub, red.b_ub)
            q_top = max(1.0, float(np.max(red.q, initial=0.0)))
            for bump in (1e-8 * q_top, 1e-5 * q_top):
                result = _ipm.solve_ipm(
                    red.q + bump, red.c, a_eq, b_eq, a_ub, b_ub, red.lb, red.ub,
                    tol=max(tol, 1e-9), max_iter=200, regularization=1e-9,
                )
                if result.status == "optimal":
                    break
            if result.status != "optimal":
                raise SolverError(f"interior point failed: {result.message}")

        x_red = result.x
        polished = _ipm.polish(
            red.q, red.c, red.a_eq, red.b_eq, red.a_ub, red.b_ub, red.lb, red.ub, x_red
        )
        if polished is not None:
            obj_p = float(0.5 * polished @ (red.q * polished) + red.c @ polished)
            obj_i = float(0.5 * x_red @ (red.q * x_red) + red.c @ x_red)
            if obj_p <= obj_i + 1e-9 * (1.0 + abs(obj_i)):
                x_red = polished

    x_full = red.fixed_values.copy()
    x_full[red.keep] = x_red
    x_full = np.clip(x_full, lb, ub)
    kkt = _kkt_residual_original(problem, x_full)
    if kkt > FEAS_TOL:
        x_full = _feasibility_repair(problem, x_full, lb, ub)
        kkt = _kkt_residual_original(problem, x_full)
    if kkt > FEAS_TOL:
        raise SolverError(f"primal residual {kkt:.2e} exceeds tolerance after solve")
    obj = _objective(problem, x_full)
    return MiqpSolution(STATUS_OPTIMAL, x_full, obj, obj, 0.0, kkt)


# ---------------------------------------------------------------------------
# branch and bound


def _fractionality(x: np.ndarray, int_idx: np.ndarray) -> tuple[float, int]:
    vals = x[int_idx]
    frac = np.abs(vals - np.round(vals))
    best = int(np.argmax(frac))  # argmax takes the lowest index on ties
    return float(frac[best]), int(int_idx[best])


def _repair_incumbent(
    problem: MiqpProblem,
    lb: np.ndarray,
    ub: np.ndarray,
    int_idx: np.ndarray,
    int_values: np.ndarray,
) -> MiqpSolution | None:
    """Fix integer variables to the given values and resolve the continuous part."""
    lo = lb.copy()
    hi = ub.copy()
    vals = np.clip(np.round(int_values), lb[int_idx], ub[int_idx])
    lo[int_idx] = vals
    hi[int_idx] = vals
    try:
        sol = solve_qp(problem, lb=lo, ub=hi)
    except SolverError:
        return None
    if sol.status != STATUS_OPTIMAL:
        return None
    sol.x[int_idx] = vals
    sol.objective = _objective(problem, sol.x)
    return sol


def _iterative_dive(
    problem: MiqpProblem,
    lb: np.ndarray,
    ub: np.ndarray,
    int_idx: np.ndarray,
    x_start: np.ndarray,
    max_steps: int = 60,
) -> MiqpSolution | None:
    """Fix fractional integers one at a time, flipping on infeasibility.

    A slower but much more reliable incumbent finder than one-shot rounding:
    coupled integer chains (minimum up/down times) heal as each re-solve
    re-integralizes its neighbors.
    """
    lo = lb.copy()
    hi = ub.copy()
    x = x_start
    for _ in range(max_steps):
        frac, var = _fractionality(x, int_idx)
        if frac <= INT_TOL:
            free = int_idx[(hi[int_idx] - lo[int_idx]) > 0.5]
            lo[free] = np.round(x[free])
            hi[free] = np.round(x[free])
            try:
                sol = solve_qp(problem, lb=lo, ub=hi)
            except SolverError:
                return None
            if sol.status != STATUS_OPTIMAL:
                return None
            sol.x[int_idx] = np.round(sol.x[int_idx])
            sol.objective = _objective(problem, sol.x)
            return sol
        val = float(np.round(x[var]))
        for candidate in (val, 1.0 - val if lb[var] >= 0 and ub[var] <= 1 else None):
            if candidate is None or candidate < lb[var] or candidate > ub[var]:
                continue
            lo2, hi2 = lo.copy(), hi.copy()
            lo2[var] = hi2[var] = candidate
            try:
                sol = solve_qp(problem, lb=lo2, ub=hi2)
            except SolverError:
                return None
            if sol.status == STATUS_OPTIMAL:
                lo, hi = lo2, hi2
                x = sol.x
                break
        else:
            return None
    return None


def solve_miqp(
    problem: MiqpProblem,
    *,
    node_limit: int = 200_000,
    time_limit: float | None = None,
    rel_gap: float = 1e-6,
    abs_gap: float = 0.0,
    incumbent_start: np.ndarray | None = None,
) -> MiqpSolution:
    """Branch-and-bound over the integer-marked variables.

    Branching picks the most fractional variable (ties to the lowest id) and
    node selection is best-bound, which makes runs deterministic.  The search
    stops once the incumbent is within ``abs_gap + rel_gap*(1+|obj|)`` of the
    global bound.  ``incumbent_start`` warm-starts the search with integer
    values to be repaired into a feasible point.
    """
    problem.validate()
    int_idx = np.where(problem.is_integer)[0]
    if int_idx.size == 0:
        return solve_qp(problem)

    t0 = time.perf_counter()
    base_lb = problem.lower.copy()
    base_ub = problem.upper.copy()

    def gap_tol(obj: float) -> float:
        return abs_gap + rel_gap * (1.0 + abs(obj))

    best_x: np.ndarray | None = None
    best_obj = np.inf

    if incumbent_start is not None:
        start = np.asarray(incumbent_start, dtype=float)
        vals = start[int_idx] if start.shape[0] == problem.n_vars else start
        rep = _repair_incumbent(problem, base_lb, base_ub, int_idx, vals)
        if rep is not None:
            best_x, best_obj = rep.x, rep.objective

    root = solve_qp(problem, lb=base_lb, ub=base_ub)
    nodes = 1
    if root.status == STATUS_INFEASIBLE:
        return MiqpSolution(
            STATUS_INFEASIBLE, None, np.inf, np.inf, np.inf, np.inf,
            infeasibility_certificate=root.infeasibility_certificate,
            nodes=nodes, message="root infeasible",
        )
    root_bound = root.objective

    frac, bvar = _fractionality(root.x, int_idx)
    if frac <= INT_TOL:
        rep = _repair_incumbent(problem, base_lb, base_ub, int_idx, root.x[int_idx])
        if rep is not None and rep.objective <= best_obj:
            best_x, best_obj = rep.x, rep.objective
        if best_x is not None and best_obj <= root_bound + gap_tol(best_obj):
            return MiqpSolution(
                STATUS_OPTIMAL, best_x, best_obj, root_bound,
                best_obj - root_bound, root.kkt_residual, nodes=nodes,
            )
    else:
        # dive heuristic: round the relaxation and repair
        rep = _repair_incumbent(problem, base_lb, base_ub, int_idx, root.x[int_idx])
        if rep is not None and rep.objective < best_obj:
            best_x, best_obj = rep.x, rep.objective
        if best_x is None:
            # one-shot rounding can break coupled chains; dive variable by variable
            rep = _iterative_dive(problem, base_lb, base_ub, int_idx, root.x)
            if rep is not None:
                best_x, best_obj = rep.x, rep.objective

    counter = 0
    heap: list[tuple[float, int, dict[int, tuple[float, float]]]] = []
    heapq.heappush(heap, (root_bound, counter, {}))
    status = STATUS_OPTIMAL
    best_bound = root_bound

    while heap:
        if nodes >= node_limit:
            status = STATUS_NODE_LIMIT
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            status = STATUS_TIME_LIMIT
            break

        bound, _, overrides = heapq.heappop(heap)
        best_bound = bound
        if best_x is not None and bound >= best_obj - gap_tol(best_obj):
            # remaining nodes cannot improve past the gap tolerance
            heap.clear()
            break

        lo = base_lb.copy()
        hi = base_ub.copy()
        for j, (l, u) in overrides.items():
            lo[j], hi[j] = l, u

        nodes += 1
        node_sol = solve_qp(problem, lb=lo, ub=hi)
        if node_sol.status == STATUS_INFEASIBLE:
            continue
        if node_sol.objective < bound - 1e-6 * (1.0 + abs(bound)):
            # a child can never beat its parent's relaxation
            node_sol.objective = bound
        if best_x is not None and node_sol.objective >= best_obj - gap_tol(best_obj):
            continue

        frac, bvar = _fractionality(node_sol.x, int_idx)
        if frac <= INT_TOL:
            rep = _repair_incumbent(problem, lo, hi, int_idx, node_sol.x[int_idx])
            if rep is not None and rep.objective < best_obj:
                best_x, best_obj = rep.x, rep.objective
            continue

        val = node_sol.x[bvar]
        down = dict(overrides)
        down[bvar] = (lo[bvar], float(np.floor(val)))
        up = dict(overrides)
        up[bvar] = (float(np.ceil(val)), hi[bvar])
        counter += 1
        heapq.heappush(heap, (node_sol.objective, counter, down))
        counter += 1
        heapq.heappush(heap, (node_sol.objective, counter, up))

    if heap:
        best_bound = min(best_bound, min(b for b, _, _ in heap))
    elif status == STATUS_OPTIMAL and best_x is not None:
        best_bound = max(best_bound, best_obj - gap_tol(best_obj))

    if best_x is None:
        if status == STATUS_OPTIMAL:
            return MiqpSolution(
                STATUS_INFEASIBLE, None, np.inf, np.inf, np.inf, np.inf,
                nodes=nodes, message="exhausted without integer-feasible point",
            )
        return MiqpSolution(
            status, None, np.inf, best_bound, np.inf, np.inf,
            nodes=nodes, message="budget exhausted before finding an incumbent",
        )

    kkt = _kkt_residual_original(problem, best_x)
    return MiqpSolution(
        status, best_x, best_obj, min(best_bound, best_obj),
        max(0.0, best_obj - best_bound), kkt, nodes=nodes,
    )


# ---------------------------------------------------------------------------
# backends


class SolverBackend:
    """Contract for pluggable MIQP engines."""

    name = "base"

    def solve_qp(self, problem: MiqpProblem) -> MiqpSolution:
        raise NotImplementedError

    def solve_miqp(self, problem: MiqpProblem, **limits) -> MiqpSolution:
        raise NotImplementedError


class BundledBackend(SolverBackend):
    name = "bundled"

    def solve_qp(self, problem: MiqpProblem) -> MiqpSolution:
        return solve_qp(problem)

    def solve_miqp(self, problem: MiqpProblem, **limits) -> MiqpSolution:
        return solve_miqp(problem, **limits)


_BACKENDS: dict[str, type[SolverBackend] | object] = {"bundled": BundledBackend}


def register_backend(name: str, factory) -> None:
    _BACKENDS[name] = factory


def get_backend(name: str = "bundled") -> SolverBackend:
    try:
        factory = _BACKENDS[name]
    except KeyError:
        raise ConfigError(
            f"solver backend {name!r} is not registered (available: {sorted(_BACKENDS)})"
        ) from None
    backend = factory() if callable(factory) else factory
    return backend


# ---------------------------------------------------------------------------
# LP-format dump


def _lp_name(name: str) -> str:
    out = "".join(ch if ch.isalnum() or ch in "_." else "_" for ch in name)
    return out if out and not out[0].isdigit() else f"v_{out}"


def write_lp(problem: MiqpProblem, path) -> None:
    """Dump the problem in CPLEX-LP style text for debugging or hand-off."""
    names = [
        _lp_name(problem.names[j]) if problem.names else f"x{j}"
        for j in range(problem.n_vars)
    ]
    lines = ["\\ dpgrid MIQP dump", "Minimize", " obj:"]
    terms = []
    for j in range(problem.n_vars):
        if problem.lin_cost[j] != 0:
            terms.append(f" {problem.lin_cost[j]:+.12g} {names[j]}")
    quad_terms = [
        f" {problem.quad_cost[j]:+.12g} {names[j]} ^2"
        for j in range(problem.n_vars)
        if problem.quad_cost[j] != 0
    ]
    body = "".join(terms) if terms else " 0 " + names[0]
    if quad_terms:
        body += " + [" + "".join(quad_terms) + " ] / 2"
    lines[-1] += body
    lines.append("Subject To")
    a = problem.a_matrix.tocsr()
    sense_map = {"<": "<=", "=": "=", ">": ">="}
    for r in range(problem.n_rows):
        row = []
        for k in range(a.indptr[r], a.indptr[r + 1]):
            row.append(f" {a.data[k]:+.12g} {names[a.indices[k]]}")
        rname = (
            _lp_name(problem.row_names[r])
            if problem.row_names and problem.row_names[r]
            else f"c{r}"
        )
        lines.append(
            f" {rname}:" + "".join(row) + f" {sense_map[problem.senses[r]]} {problem.rhs[r]:.12g}"
        )
    lines.append("Bounds")
    for j in range(problem.n_vars):
        lo, hi = problem.lower[j], problem.upper[j]
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" {names[j]} free")
        else:
            lo_s = f"{lo:.12g}" if np.isfinite(lo) else "-inf"
            hi_s = f"{hi:.12g}" if np.isfinite(hi) else "+inf"
            lines.append(f" {lo_s} <= {names[j]} <= {hi_s}")
    binaries = [
        names[j]
        for j in range(problem.n_vars)
        if problem.is_integer[j] and problem.lower[j] >= 0 and problem.upper[j] <= 1
    ]
    generals = [
        names[j]
        for j in range(problem.n_vars)
        if problem.is_integer[j] and names[j] not in set(binaries)
    ]
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(binaries))
    if generals:
        lines.append("Generals")
        lines.append(" " + " ".join(generals))
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)
