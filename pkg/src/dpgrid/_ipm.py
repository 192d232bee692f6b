"""Primal-dual interior point method for convex quadratic programs.

Solves
    min  0.5 x'Qx + c'x
    s.t. E x  = d
         G x <= h
         l <= x <= u        (entries of l/u may be infinite)

with Q diagonal and nonnegative.  The method is a Mehrotra
predictor-corrector with a shared primal/dual step length, light
regularization and an optional active-set polish at the end.  Small systems
go through dense LAPACK factorizations; larger ones use a sparse LU of the
augmented KKT matrix with a symmetric-friendly ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as dla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_INF = np.inf

# below this KKT dimension dense factorizations beat sparse setup overhead
DENSE_LIMIT = 260


@dataclass
class IpmResult:
    status: str  # 'optimal' | 'failed'
    x: np.ndarray | None
    objective: float
    kkt_residual: float
    iterations: int
    message: str = ""


def _step_length(v: np.ndarray, dv: np.ndarray) -> float:
    """Largest alpha in (0, 1] keeping v + alpha*dv strictly positive."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _factorize_sparse(kkt_mat: sp.csc_matrix) -> spla.SuperLU:
    """Sparse LU tuned for symmetric quasi-definite KKT systems."""
    return spla.splu(
        kkt_mat,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.1,
        options={"SymmetricMode": True},
    )


def solve_ipm(
    q: np.ndarray,
    c: np.ndarray,
    a_eq: sp.csr_matrix | None,
    b_eq: np.ndarray | None,
    a_ub: sp.csr_matrix | None,
    b_ub: np.ndarray | None,
    lb: np.ndarray,
    ub: np.ndarray,
    *,
    tol: float = 1e-9,
    max_iter: int = 100,
    regularization: float = 1e-11,
) -> IpmResult:
    n = c.shape[0]
    me = 0 if a_eq is None else a_eq.shape[0]
    mi = 0 if a_ub is None else a_ub.shape[0]
    if a_eq is None:
        a_eq = sp.csr_matrix((0, n))
        b_eq = np.zeros(0)
    if a_ub is None:
        a_ub = sp.csr_matrix((0, n))
        b_ub = np.zeros(0)

    dense = (n + me) <= DENSE_LIMIT and mi <= 4 * DENSE_LIMIT
    if dense:
        aeq = np.asarray(a_eq.todense()) if me else np.zeros((0, n))
        aub = np.asarray(a_ub.todense()) if mi else np.zeros((0, n))
        kkt_template = None
    else:
        aeq, aub = a_eq, a_ub
        # condensed KKT [[diag + G'WG, E'], [E, -dI]] has a fixed pattern:
        # precompute it once and refresh only the numeric values per iteration
        au = a_ub.tocsr().copy()
        au.sort_indices()
        lens = np.diff(au.indptr).astype(np.int64)
        m2 = lens * lens
        total = int(m2.sum())
        if total:
            starts = np.cumsum(m2) - m2
            base = np.repeat(au.indptr[:-1].astype(np.int64), m2)
            offs = np.arange(total, dtype=np.int64) - np.repeat(starts, m2)
            k_rep = np.repeat(lens, m2)
            left_pos = base + offs // k_rep
            right_pos = base + offs % k_rep
            pair_v = au.data[left_pos] * au.data[right_pos]
            pair_r = np.repeat(np.arange(mi, dtype=np.int64), m2)
            codes = au.indices[right_pos].astype(np.int64) * n + au.indices[left_pos]
        else:
            pair_v = np.zeros(0)
            pair_r = np.zeros(0, dtype=np.int64)
            codes = np.zeros(0, dtype=np.int64)
        diag_codes = np.arange(n, dtype=np.int64) * (n + 1)
        u_codes, inv = np.unique(np.concatenate([codes, diag_codes]), return_inverse=True)
        inv = inv.reshape(-1)
        inv_pairs = inv[: codes.size]
        inv_diag = inv[codes.size:]
        nnz_h = u_codes.size
        h_marked = sp.csc_matrix(
            (np.arange(1, nnz_h + 1, dtype=np.float64), (u_codes % n, u_codes // n)),
            shape=(n, n),
        )
        marker_count = nnz_h
        static_vals: list[tuple[np.ndarray, np.ndarray]] = []
        if me:
            aet = a_eq.T.tocoo()
            aet_markers = marker_count + 1 + np.arange(aet.nnz, dtype=np.int64)
            marker_count += aet.nnz
            ae = a_eq.tocoo()
            ae_markers = marker_count + 1 + np.arange(ae.nnz, dtype=np.int64)
            marker_count += ae.nnz
            delta_markers = marker_count + 1 + np.arange(me, dtype=np.int64)
            marker_count += me
            kkt_template = sp.bmat(
                [
                    [h_marked, sp.coo_matrix((aet_markers.astype(float), (aet.row, aet.col)), shape=aet.shape)],
                    [sp.coo_matrix((ae_markers.astype(float), (ae.row, ae.col)), shape=ae.shape),
                     sp.coo_matrix((delta_markers.astype(float), (np.arange(me), np.arange(me))), shape=(me, me))],
                ],
                format="csc",
            )
            static_vals = [(aet_markers, aet.data), (ae_markers, ae.data)]
        else:
            delta_markers = np.zeros(0, dtype=np.int64)
            kkt_template = h_marked.copy()
        slot_marker = np.rint(kkt_template.data).astype(np.int64)
        val_table = np.zeros(marker_count + 1)
        for markers, data_vals in static_vals:
            val_table[markers] = data_vals

    il = np.where(np.isfinite(lb))[0]
    iu = np.where(np.isfinite(ub))[0]
    nl, nu = il.size, iu.size

    both = np.isfinite(lb) & np.isfinite(ub)
    x = np.zeros(n)
    x[both] = 0.5 * (lb[both] + ub[both])
    lo_only = np.isfinite(lb) & ~np.isfinite(ub)
    x[lo_only] = lb[lo_only] + 1.0
    hi_only = ~np.isfinite(lb) & np.isfinite(ub)
    x[hi_only] = ub[hi_only] - 1.0
    # keep a safe distance from each finite bound (quarter-box for narrow boxes)
    pad = np.where(both, 0.25 * (ub - lb), 1e-4)
    pad = np.minimum(pad, 1e-4)
    lo_clip = np.where(np.isfinite(lb), lb + pad, -_INF)
    hi_clip = np.where(np.isfinite(ub), ub - pad, _INF)
    x = np.clip(x, lo_clip, hi_clip)

    m_total = mi + nl + nu
    if m_total == 0 and me == 0:
        xs = np.zeros(n)
        pos = q > 0
        xs[pos] = -c[pos] / q[pos]
        if np.any(~pos & (c != 0)):
            return IpmResult("failed", None, -np.inf, np.inf, 0, "unbounded")
        obj = float(0.5 * xs @ (q * xs) + c @ xs)
        return IpmResult("optimal", xs, obj, 0.0, 0)
    if m_total == 0:
        # equality-constrained QP: one saddle-point solve
        reg = max(regularization, 1e-12)
        kkt = sp.bmat(
            [[sp.diags(q + reg), a_eq.T], [a_eq, -reg * sp.identity(me)]],
            format="csc",
        )
        try:
            sol = _factorize_sparse(kkt).solve(np.concatenate([-c, b_eq]))
        except RuntimeError:
            return IpmResult("failed", None, np.inf, np.inf, 0, "singular KKT system")
        xs = sol[:n]
        obj = float(0.5 * xs @ (q * xs) + c @ xs)
        res = float(np.max(np.abs(a_eq @ xs - b_eq), initial=0.0))
        if res > 1e-7 * (1.0 + float(np.max(np.abs(b_eq), initial=0.0))):
            return IpmResult("failed", xs, obj, res, 0, "equality system inconsistent")
        return IpmResult("optimal", xs, obj, res, 1)

    s = np.maximum(1.0, b_ub - aub @ x) if mi else np.zeros(0)
    z = np.ones(mi)
    y = np.zeros(me)
    wl = np.ones(nl)
    wu = np.ones(nu)
    gl = x[il] - lb[il]
    gu = ub[iu] - x[iu]

    c_scale = max(1.0, float(np.max(np.abs(c)) if n else 1.0))
    be_scale = 1.0 + np.abs(b_eq)
    bu_scale = 1.0 + np.abs(b_ub)

    # fall back on the best iterate when late-stage conditioning breaks down
    best_metric = np.inf
    best_x = None
    loose_tol = max(1e-7, 100.0 * tol)

    delta = regularization
    iters = 0
    for iters in range(1, max_iter + 1):
        rd = q * x + c + aeq.T @ y + aub.T @ z
        if nl:
            rd[il] -= wl
        if nu:
            rd[iu] += wu
        rp = aeq @ x - b_eq
        rg = aub @ x + s - b_ub

        comp = 0.0
        if mi:
            comp += float(s @ z)
        if nl:
            comp += float(gl @ wl)
        if nu:
            comp += float(gu @ wu)
        mu = comp / m_total

        obj = float(0.5 * x @ (q * x) + c @ x)
        res_d = float(np.max(np.abs(rd))) if n else 0.0
        res_p = float(np.max(np.abs(rp) / be_scale)) if me else 0.0
        res_g = float(np.max(np.abs(rg) / bu_scale)) if mi else 0.0
        stat_scale = c_scale + (float(np.max(np.abs(q * x))) if n else 0.0)
        metric = max(
            res_d / stat_scale,
            res_p,
            res_g,
            mu / (1.0 + abs(obj)),
        )
        if metric < best_metric:
            best_metric = metric
            best_x = x.copy()
        if (
            res_d <= tol * stat_scale
            and res_p <= tol
            and res_g <= tol
            and mu <= max(tol * 10, 1e-10) * (1.0 + abs(obj))
        ):
            return IpmResult("optimal", x, obj, max(res_d, res_p, res_g, mu), iters)
        if metric > 1e4 * best_metric and best_metric <= loose_tol:
            # conditioning collapsed after reaching an acceptable point
            obj_b = float(0.5 * best_x @ (q * best_x) + c @ best_x)
            return IpmResult("optimal", best_x, obj_b, best_metric, iters, "loose")

        if mu > 1e16 or (n and np.max(np.abs(x)) > 1e14):
            break

        db = np.full(n, delta)
        if nl:
            db[il] += wl / gl
        if nu:
            db[iu] += wu / gu
        w_row = z / s if mi else None

        solve = None
        local_delta = delta
        for _ in range(4):
            try:
                if dense:
                    hmat = np.diag(q + db)
                    if mi:
                        hmat += (aub * w_row[:, None]).T @ aub
                    dim = n + me
                    kkt_mat = np.zeros((dim, dim))
                    kkt_mat[:n, :n] = hmat
                    if me:
                        kkt_mat[:n, n:] = aeq.T
                        kkt_mat[n:, :n] = aeq
                        kkt_mat[n:, n:] = -local_delta * np.eye(me)
                    lu_piv = dla.lu_factor(kkt_mat, check_finite=False)
                    if not np.all(np.isfinite(lu_piv[0])):
                        raise RuntimeError("dense factorization produced non-finite values")
                    solve = lambda rhs: dla.lu_solve(lu_piv, rhs, check_finite=False)
                else:
                    if mi:
                        h_vals = np.bincount(
                            inv_pairs, weights=w_row[pair_r] * pair_v, minlength=nnz_h
                        )
                    else:
                        h_vals = np.zeros(nnz_h)
                    h_vals[inv_diag] += q + db
                    val_table[1 : nnz_h + 1] = h_vals
                    if me:
                        val_table[delta_markers] = -local_delta
                    kkt_template.data[:] = val_table[slot_marker]
                    solve = _factorize_sparse(kkt_template).solve
                break
            except (RuntimeError, np.linalg.LinAlgError, ValueError):
                local_delta = max(local_delta, 1e-10) * 1e4
                db += local_delta
                solve = None
        if solve is None:
            return IpmResult("failed", x, obj, np.inf, iters, "singular KKT system")

        def kkt_apply(vec):
            if not dense:
                return kkt_template @ vec
            vx = vec[:n]
            out_x = (q + db) * vx
            if mi:
                out_x = out_x + aub.T @ (w_row * (aub @ vx))
            if me:
                vy = vec[n:]
                out_x = out_x + aeq.T @ vy
                out_y = aeq @ vx - local_delta * vy
                return np.concatenate([out_x, out_y])
            return out_x

        def solve_refined(rhs):
            sol = solve(rhs)
            # one round of iterative refinement fights barrier ill-conditioning
            resid = rhs - kkt_apply(sol)
            denom = float(np.max(np.abs(rhs), initial=1.0))
            if np.max(np.abs(resid)) > 1e-11 * denom:
                sol = sol + solve(resid)
            return sol

        def newton(rcs, rcl, rcu):
            r1 = -rd.copy()
            if nl:
                r1[il] -= rcl / gl
            if nu:
                r1[iu] += rcu / gu
            if mi:
                r1 = r1 - aub.T @ ((z * rg - rcs) / s)
            rhs = np.concatenate([r1, -rp]) if me else r1
            sol = solve_refined(rhs)
            dx = sol[:n]
            dy = sol[n:] if me else np.zeros(0)
            ds = -rg - aub @ dx if mi else np.zeros(0)
            dz = -(rcs + z * ds) / s if mi else np.zeros(0)
            dwl = -(rcl + wl * dx[il]) / gl if nl else np.zeros(0)
            dwu = (-rcu + wu * dx[iu]) / gu if nu else np.zeros(0)
            return dx, dy, ds, dz, dwl, dwu

        # affine-scaling (predictor) direction
        rcs_a = s * z if mi else np.zeros(0)
        rcl_a = gl * wl if nl else np.zeros(0)
        rcu_a = gu * wu if nu else np.zeros(0)
        dxa, dya, dsa, dza, dwla, dwua = newton(rcs_a, rcl_a, rcu_a)

        ap = min(
            _step_length(s, dsa) if mi else 1.0,
            _step_length(gl, dxa[il]) if nl else 1.0,
            _step_length(gu, -dxa[iu]) if nu else 1.0,
        )
        ad = min(
            _step_length(z, dza) if mi else 1.0,
            _step_length(wl, dwla) if nl else 1.0,
            _step_length(wu, dwua) if nu else 1.0,
        )
        comp_aff = 0.0
        if mi:
            comp_aff += float((s + ap * dsa) @ (z + ad * dza))
        if nl:
            comp_aff += float((gl + ap * dxa[il]) @ (wl + ad * dwla))
        if nu:
            comp_aff += float((gu - ap * dxa[iu]) @ (wu + ad * dwua))
        mu_aff = comp_aff / m_total
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        sigma = min(max(sigma, 0.0), 0.99)

        # corrector; re-center with larger sigma if the step collapses
        alpha = 0.0
        for _ in range(3):
            rcs = (s * z + dsa * dza - sigma * mu) if mi else np.zeros(0)
            rcl = (gl * wl + dxa[il] * dwla - sigma * mu) if nl else np.zeros(0)
            rcu = (gu * wu + (-dxa[iu]) * dwua - sigma * mu) if nu else np.zeros(0)
            dx, dy, ds, dz, dwl, dwu = newton(rcs, rcl, rcu)

            ap = min(
                _step_length(s, ds) if mi else 1.0,
                _step_length(gl, dx[il]) if nl else 1.0,
                _step_length(gu, -dx[iu]) if nu else 1.0,
            )
            ad = min(
                _step_length(z, dz) if mi else 1.0,
                _step_length(wl, dwl) if nl else 1.0,
                _step_length(wu, dwu) if nu else 1.0,
            )
            alpha = 0.995 * min(ap, ad)
            if alpha > 1e-3 or sigma >= 0.9:
                break
            sigma = min(0.9, max(10.0 * sigma, 0.5))
        if alpha <= 1e-14:
            if best_metric <= loose_tol:
                obj_b = float(0.5 * best_x @ (q * best_x) + c @ best_x)
                return IpmResult("optimal", best_x, obj_b, best_metric, iters, "loose")
            return IpmResult("failed", x, obj, max(res_d, res_p, res_g), iters, "step collapsed")

        x = x + alpha * dx
        y = y + alpha * dy
        if mi:
            s = np.maximum(s + alpha * ds, 1e-300)
            z = np.maximum(z + alpha * dz, 1e-300)
        if nl:
            wl = np.maximum(wl + alpha * dwl, 1e-300)
            # keep a strictly positive distance: cancellation can round gl to 0
            floor_l = 1e-13 * (1.0 + np.abs(lb[il]))
            x[il] = np.maximum(x[il], lb[il] + floor_l)
            gl = x[il] - lb[il]
        if nu:
            wu = np.maximum(wu + alpha * dwu, 1e-300)
            floor_u = 1e-13 * (1.0 + np.abs(ub[iu]))
            x[iu] = np.minimum(x[iu], ub[iu] - floor_u)
            gu = ub[iu] - x[iu]

    if best_metric <= loose_tol:
        obj_b = float(0.5 * best_x @ (q * best_x) + c @ best_x)
        return IpmResult("optimal", best_x, obj_b, best_metric, iters, "loose")
    obj = float(0.5 * x @ (q * x) + c @ x)
    return IpmResult("failed", x, obj, np.inf, iters, "iteration limit")


def polish(
    q: np.ndarray,
    c: np.ndarray,
    a_eq: sp.csr_matrix | None,
    b_eq: np.ndarray | None,
    a_ub: sp.csr_matrix | None,
    b_ub: np.ndarray | None,
    lb: np.ndarray,
    ub: np.ndarray,
    x: np.ndarray,
    *,
    feas_tol: float = 1e-7,
) -> np.ndarray | None:
    """Active-set refinement of an interior-point solution.

    Fixes variables sitting at bounds, treats near-active inequality rows as
    equalities and re-solves the reduced KKT system.  Returns the refined
    point, or None when the guess does not check out.
    """
    n = x.shape[0]
    me = 0 if a_eq is None else a_eq.shape[0]
    mi = 0 if a_ub is None else a_ub.shape[0]

    atol = 1e-7
    at_lo = np.isfinite(lb) & (x - lb <= atol * (1.0 + np.abs(lb)))
    at_hi = np.isfinite(ub) & (ub - x <= atol * (1.0 + np.abs(ub)))
    fixed = at_lo | at_hi
    xf = np.where(at_lo, np.where(np.isfinite(lb), lb, 0.0), x)
    xf = np.where(at_hi & ~at_lo, np.where(np.isfinite(ub), ub, 0.0), xf)

    rows = []
    rhs = []
    if me:
        rows.append(a_eq)
        rhs.append(b_eq)
    if mi:
        slack = b_ub - a_ub @ x
        act = slack <= atol * (1.0 + np.abs(b_ub))
        if np.any(act):
            rows.append(a_ub[act])
            rhs.append(b_ub[act])
    free = ~fixed
    nf = int(np.count_nonzero(free))
    if nf == 0:
        cand = xf
    else:
        if rows:
            a_act = sp.vstack(rows, format="csr")
            b_act = np.concatenate(rhs)
            a_red = a_act[:, free]
            ma = a_red.shape[0]
        else:
            a_red = sp.csr_matrix((0, nf))
            b_act = np.zeros(0)
            a_act = sp.csr_matrix((0, x.shape[0]))
            ma = 0
        qf = q[free]
        # correction form: solve for a damped step from xf, so null-space
        # directions stay put instead of blowing up the candidate
        grad_f = (q * xf + c)[free]
        resid_act = b_act - a_act @ xf if ma else np.zeros(0)
        reg = 1e-10
        rhs_v = np.concatenate([-grad_f, resid_act])
        try:
            if nf + ma <= DENSE_LIMIT:
                kkt = np.zeros((nf + ma, nf + ma))
                kkt[:nf, :nf] = np.diag(qf + reg)
                if ma:
                    a_d = np.asarray(a_red.todense())
                    kkt[:nf, nf:] = a_d.T
                    kkt[nf:, :nf] = a_d
                    kkt[nf:, nf:] = -reg * np.eye(ma)
                sol = dla.lu_solve(
                    dla.lu_factor(kkt, check_finite=False), rhs_v, check_finite=False
                )
            else:
                kkt = sp.bmat(
                    [
                        [sp.diags(qf + reg), a_red.T],
                        [a_red, -reg * sp.identity(ma)],
                    ],
                    format="csc",
                )
                sol = _factorize_sparse(kkt).solve(rhs_v)
        except (RuntimeError, np.linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(sol)):
            return None
        step = sol[:nf]
        if np.max(np.abs(step), initial=0.0) > 1e3 * (1.0 + np.max(np.abs(x))):
            return None
        cand = xf.copy()
        cand[free] = xf[free] + step

    lo_scale = 1.0 + np.abs(np.where(np.isfinite(lb), lb, 0.0))
    hi_scale = 1.0 + np.abs(np.where(np.isfinite(ub), ub, 0.0))
    if np.any(cand < lb - feas_tol * lo_scale) or np.any(cand > ub + feas_tol * hi_scale):
        return None
    if me and np.max(np.abs(a_eq @ cand - b_eq) / (1.0 + np.abs(b_eq))) > feas_tol:
        return None
    if mi:
        viol = (a_ub @ cand - b_ub) / (1.0 + np.abs(b_ub))
        if np.max(viol) > feas_tol:
            return None
    return np.clip(cand, lb, ub)
