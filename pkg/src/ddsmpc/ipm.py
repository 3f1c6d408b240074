"""Primal-dual interior-point method for the QPs of :mod:`ddsmpc.qp`.

Two-sided rows ``lower <= Az <= upper`` are split into equalities ``E z = b``
(rows with ``lower == upper``) and one-sided inequalities ``G z + s = h`` with
``s >= 0``. Each iteration takes a Mehrotra predictor-corrector step. The
Newton system is reduced to ``P + G'WG`` (dense) for small problems and solved
as a sparse quasi-definite KKT system otherwise.

Interior-point iterations are insensitive to the degeneracy of LP-like
robust counterparts, which is where operator splitting needs tens of
thousands of iterations.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["InteriorPointSolver"]

_DENSE_LIMIT = 1500
_STEP = 0.99
# a stalled run returns its best iterate when every test is within this factor
_INACCURATE = 1e3
_STALL = 8
# active-set polishing is attempted only on problems this small
_POLISH_LIMIT = 400


def _row_inf_norms(M) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(0)
    return np.asarray(abs(M).max(axis=1).todense()).ravel()


def _split_rows(lower, upper):
    fin_l, fin_u = np.isfinite(lower), np.isfinite(upper)
    both = fin_l & fin_u
    gap = np.where(both, upper - lower, np.inf)
    scale = np.maximum(1.0, np.abs(np.where(both, lower, 0.0)))
    eq = both & (gap <= 1e-10 * scale)
    up = fin_u & ~eq
    lo = fin_l & ~eq
    return np.flatnonzero(eq), np.flatnonzero(up), np.flatnonzero(lo)


class _Structure:
    """Row partition and scaled constraint blocks for one finiteness pattern."""

    def __init__(self, A, eq, up, lo):
        self.eq, self.up, self.lo = eq, up, lo
        E = A[eq, :]
        G = sp.vstack([A[up, :], -A[lo, :]], format="csr")
        ge = _row_inf_norms(E)
        gg = _row_inf_norms(G)
        ge[ge == 0] = 1.0
        gg[gg == 0] = 1.0
        self.de = 1.0 / ge
        self.dg = 1.0 / gg
        self.E = sp.csr_matrix(sp.diags(self.de) @ E)
        self.G = sp.csr_matrix(sp.diags(self.dg) @ G)
        self.GT = sp.csr_matrix(self.G.T)
        self.ET = sp.csr_matrix(self.E.T)

    def rhs(self, lower, upper):
        b = self.de * 0.5 * (lower[self.eq] + upper[self.eq])
        h = self.dg * np.concatenate([upper[self.up], -lower[self.lo]])
        return b, h


class InteriorPointSolver:
    """Interior-point solver bound to fixed ``P`` and ``A``; see :class:`ddsmpc.qp.QpSolver`."""

    def __init__(self, P, A, settings):
        self.settings = settings
        self.P = sp.csr_matrix(P)
        self.A = sp.csr_matrix(A)
        self._structures: dict[bytes, _Structure] = {}

    def _structure(self, lower, upper) -> _Structure:
        eq, up, lo = _split_rows(lower, upper)
        key = np.packbits(np.concatenate([
            np.isin(np.arange(lower.size), eq), np.isin(np.arange(lower.size), up),
            np.isin(np.arange(lower.size), lo)])).tobytes()
        st = self._structures.get(key)
        if st is None:
            if len(self._structures) > 4:
                self._structures.clear()
            st = _Structure(self.A, eq, up, lo)
            self._structures[key] = st
        return st

    def solve(self, q, lower, upper):
        from .qp import QpSolution, QpStatus

        s_ = self.settings
        n = q.size
        st = self._structure(lower, upper)
        b, h = st.rhs(lower, upper)
        G, GT, E, ET = st.G, st.GT, st.E, st.ET
        m, p = h.size, b.size
        # cost scaling keeps the residual tests meaningful across problems
        pmax = float(abs(self.P).max()) if self.P.nnz else 0.0
        cs = 1.0 / max(1.0, pmax, float(np.max(np.abs(q))) if n else 0.0)
        P = self.P * cs
        qs = q * cs
        reg = s_.regularization
        dense = n <= _DENSE_LIMIT
        Pd = P.toarray() if dense else None

        def factor(w):
            if dense:
                K = Pd + (GT @ sp.diags(w) @ G).toarray() if m else Pd.copy()
                K[np.diag_indices(n)] += reg
                if p:
                    Ed = E.toarray()
                    K = np.block([[K, Ed.T], [Ed, -reg * np.eye(p)]])
                    lu = sla.lu_factor(K, check_finite=False)
                    base = lambda r: sla.lu_solve(lu, r, check_finite=False)  # noqa: E731
                else:
                    try:
                        cho = sla.cho_factor(K, check_finite=False)
                        base = lambda r: sla.cho_solve(cho, r, check_finite=False)  # noqa: E731
                    except np.linalg.LinAlgError:
                        lu = sla.lu_factor(K, check_finite=False)
                        base = lambda r: sla.lu_solve(lu, r, check_finite=False)  # noqa: E731
                return base
            K = sp.bmat([[P + reg * sp.eye(n), ET if p else None, GT if m else None],
                         [E if p else None, -reg * sp.eye(p) if p else None, None],
                         [G if m else None, None, -sp.diags(1.0 / w) if m else None]],
                        format="csc")
            lu = spla.splu(K)
            return lu.solve

        def newton(solve, w, z, s, r_d, r_p, r_e, r_c):
            if dense:
                rhs_x = -r_d - (GT @ ((z * r_p - r_c) / s) if m else 0.0)
                sol = solve(np.concatenate([rhs_x, -r_e]) if p else rhs_x)
                dx, dy = sol[:n], sol[n:]
                dz = w * (G @ dx) + (z * r_p - r_c) / s if m else np.zeros(0)
            else:
                rhs = np.concatenate([-r_d, -r_e, -r_p + r_c / z])
                sol = solve(rhs)
                dx, dy, dz = sol[:n], sol[n:n + p], sol[n + p:]
            ds = -r_p - G @ dx if m else np.zeros(0)
            return dx, dy, dz, ds

        def max_step(v, dv):
            neg = dv < 0
            if not np.any(neg):
                return 1.0
            return float(min(1.0, np.min(-v[neg] / dv[neg])))

        # initial point from the least-squares KKT system with W = I
        w1 = np.ones(m)
        solve = factor(w1)
        r_p0 = -h
        x, y, z, _ = newton(solve, w1, np.ones(m), np.ones(m), qs, r_p0, -b if p else np.zeros(0),
                            np.zeros(m))
        s = h - G @ x if m else np.zeros(0)
        z = -s.copy()
        if m:
            a = -np.min(s)
            if a >= -1e-8:
                s = s + 1.0 + a
            a = -np.min(z)
            if a >= -1e-8:
                z = z + 1.0 + a
        status = QpStatus.MAX_ITERATIONS
        it = 0
        best = (np.inf, 0, x, y, z)
        floor, progress = np.full(3, np.inf), 0
        h_norm = float(np.max(np.abs(h))) if m else 0.0
        b_norm = float(np.max(np.abs(b))) if p else 0.0
        q_norm = float(np.max(np.abs(qs))) if n else 0.0
        for it in range(1, s_.ipm_max_iterations + 1):
            Px = P @ x
            Gx = G @ x if m else np.zeros(0)
            Ex = E @ x if p else np.zeros(0)
            GTz = GT @ z if m else np.zeros(n)
            ETy = ET @ y if p else np.zeros(n)
            r_d = Px + qs + GTz + ETy
            r_p = Gx + s - h
            r_e = Ex - b
            gap = float(s @ z)
            pobj = 0.5 * x @ Px + qs @ x
            eps_p = s_.abs_tol + s_.rel_tol * max(
                float(np.max(np.abs(Gx))) if m else 0.0, h_norm,
                float(np.max(np.abs(Ex))) if p else 0.0, b_norm)
            eps_d = s_.abs_tol + s_.rel_tol * max(
                float(np.max(np.abs(Px))) if n else 0.0, q_norm,
                float(np.max(np.abs(GTz))), float(np.max(np.abs(ETy))))
            res_p = max(float(np.max(np.abs(r_p))) if m else 0.0,
                        float(np.max(np.abs(r_e))) if p else 0.0)
            res_d = float(np.max(np.abs(r_d))) if n else 0.0
            # gap test in the caller's cost units so a large penalty weight in q
            # does not loosen it
            eps_g = s_.abs_tol * cs + s_.rel_tol * abs(pobj)
            ratios = np.array([res_p / eps_p, res_d / eps_d, gap / eps_g])
            merit = float(ratios.max())
            if merit <= 1.0:
                status = QpStatus.OPTIMAL
                break
            # near the solution W = Z/S spans many decades and the dual residual
            # can drift upward; remember the best point seen
            if merit < best[0]:
                best = (merit, it, x, y, z)
            # the gap may grow while infeasibility is cut, so a stall means no
            # unconverged component has improved for a while
            clipped = np.maximum(ratios, 1.0)
            if np.any(clipped < 0.9 * floor):
                progress = it
            floor = np.minimum(floor, clipped)
            if it - progress >= _STALL:
                break
            # Farkas certificate of primal infeasibility
            ctr = float(h @ z + (b @ y if p else 0.0))
            if ctr < 0:
                cert = float(np.max(np.abs(GTz + ETy))) / -ctr
                if cert <= s_.certificate_tol:
                    status = QpStatus.INFEASIBLE
                    break
            # certificate of unboundedness
            qx = float(qs @ x)
            if qx < 0:
                xs = x / -qx
                if (float(np.max(np.abs(P @ xs))) <= s_.certificate_tol
                        and (not m or float(np.max(G @ xs)) <= s_.certificate_tol)
                        and (not p or float(np.max(np.abs(E @ xs))) <= s_.certificate_tol)):
                    status = QpStatus.UNBOUNDED
                    break
            if m == 0:
                # equality-constrained QP: one Newton step is exact
                solve = factor(np.zeros(0))
                dx, dy, _, _ = newton(solve, np.zeros(0), z, s, r_d, r_p, r_e, np.zeros(0))
                x, y = x + dx, y + dy
                continue
            mu = gap / m
            w = z / s
            solve = factor(w)
            dx, dy, dz, ds = newton(solve, w, z, s, r_d, r_p, r_e, s * z)
            a_aff = min(max_step(s, ds), max_step(z, dz))
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            r_c = s * z + ds * dz - sigma * mu
            dx, dy, dz, ds = newton(solve, w, z, s, r_d, r_p, r_e, r_c)
            a = min(1.0, _STEP * min(max_step(s, ds), max_step(z, dz)))
            x = x + a * dx
            y = y + a * dy
            z = z + a * dz
            s = s + a * ds
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
                break

        if status is QpStatus.MAX_ITERATIONS and best[0] <= _INACCURATE:
            status = QpStatus.OPTIMAL_INACCURATE
            x, y, z = best[2], best[3], best[4]
        # back to the caller's row convention: y > 0 on active upper bounds
        y_full = np.zeros(lower.size)
        zg = st.dg * z / cs
        nu = st.up.size
        y_full[st.up] += zg[:nu]
        y_full[st.lo] -= zg[nu:]
        if p:
            y_full[st.eq] = st.de * y / cs
        out = self._finish(x, y_full, q, lower, upper, it, status)
        if status is QpStatus.OPTIMAL and s_.polish and n + lower.size <= _POLISH_LIMIT:
            # rows with s < z are taken as active (strict complementarity)
            act_u = st.up[s[:nu] < z[:nu]]
            act_l = st.lo[s[nu:] < z[nu:]]
            pol = self._polish(q, lower, upper, st.eq, act_u, act_l)
            if pol is not None:
                cand = self._finish(*pol, q, lower, upper, it, status, True)
                if (cand.primal_residual <= max(out.primal_residual, s_.abs_tol)
                        and cand.dual_residual <= max(out.dual_residual, s_.abs_tol)):
                    return cand
        return out

    def _finish(self, x, y_full, q, lower, upper, it, status, polished=False):
        from .qp import QpSolution, QpStatus

        n = q.size
        Ax = self.A @ x
        zc = np.clip(Ax, lower, upper)
        r_prim = float(np.max(np.abs(Ax - zc))) if lower.size else 0.0
        Px = self.P @ x
        r_dual = float(np.max(np.abs(Px + q + self.A.T @ y_full))) if n else 0.0
        if status is QpStatus.INFEASIBLE:
            obj = np.inf
        elif status is QpStatus.UNBOUNDED:
            obj = -np.inf
        else:
            obj = float(0.5 * x @ Px + q @ x)
        return QpSolution(x, status, obj, it, r_prim, r_dual, y_full, polished)

    def _polish(self, q, lower, upper, eq, act_u, act_l):
        """Solve the equality-constrained QP on a guessed active set.

        Returns ``(x, y)`` when the point is feasible and every multiplier has
        the sign of its bound, otherwise None.
        """
        idx = np.concatenate([eq, act_u, act_l]).astype(int)
        n, k = q.size, idx.size
        P = self.P.toarray()
        Aa = self.A[idx].toarray()
        b = np.concatenate([0.5 * (lower[eq] + upper[eq]), upper[act_u], lower[act_l]])
        reg = self.settings.regularization
        K = np.block([[P, Aa.T], [Aa, np.zeros((k, k))]])
        Kr = K + np.diag(np.concatenate([np.full(n, reg), np.full(k, -reg)]))
        rhs = np.concatenate([-q, b])
        try:
            lu = sla.lu_factor(Kr, check_finite=False)
        except (ValueError, np.linalg.LinAlgError):
            return None
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(self.settings.polish_refinement):
            sol = sol + sla.lu_solve(lu, rhs - K @ sol, check_finite=False)
        if not np.all(np.isfinite(sol)):
            return None
        x, ya = sol[:n], sol[n:]
        tol = self.settings.abs_tol
        Ax = self.A @ x
        scale = 1.0 + np.abs(Ax)
        if np.any(Ax < lower - tol * scale) or np.any(Ax > upper + tol * scale):
            return None
        ne, nu = eq.size, act_u.size
        if np.any(ya[ne:ne + nu] < -tol) or np.any(ya[ne + nu:] > tol):
            return None
        y_full = np.zeros(lower.size)
        y_full[idx] = ya
        return x, y_full
