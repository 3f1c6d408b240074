"""Dense/sparse convex QP and LP solver.

Problems have the form::

    minimize    1/2 z'Pz + q'z
    subject to  lower <= A z <= upper

and are solved either with an operator-splitting (ADMM) iteration on a
Ruiz-equilibrated copy of the data, followed by polishing on the detected active
set, or with the interior-point method of :mod:`ddsmpc.ipm`. Infinite bounds are
handled directly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "QpStatus",
    "QuadraticProgram",
    "QpSolution",
    "SolverSettings",
    "KktReport",
    "QpSolver",
    "solve_qp",
    "solve_lp",
    "check_kkt",
]

# systems with more unknowns than this use a sparse LU of the KKT matrix
_DENSE_LIMIT = 1500
_RHO_MIN, _RHO_MAX = 1e-6, 1e6
_RHO_EQ_SCALE = 1e3


class QpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    OPTIMAL_INACCURATE = "optimal_inaccurate"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITERATIONS = "max_iterations"


def _as_matrix(M, shape=None):
    if sp.issparse(M):
        return sp.csc_matrix(M, dtype=float)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if shape is not None and M.size == 0:
        M = M.reshape(shape)
    return M


def _absmax(M) -> float:
    if sp.issparse(M):
        return float(abs(M).max()) if M.nnz else 0.0
    return float(np.max(np.abs(M))) if M.size else 0.0


@dataclass
class QuadraticProgram:
    """``min 1/2 z'Pz + q'z  s.t.  lower <= Az <= upper``.

    ``P`` and ``A`` may be dense arrays or scipy sparse matrices. Bounds may
    contain ``-inf``/``+inf``.
    """

    P: object
    q: np.ndarray
    A: object
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        n = self.q.size
        self.P = _as_matrix(self.P, (n, n))
        self.A = _as_matrix(self.A, (0, n))
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        m = self.A.shape[0]
        if self.P.shape != (n, n):
            raise ValueError(f"P has shape {self.P.shape}, expected {(n, n)}")
        if self.A.shape[1] != n:
            raise ValueError(f"A has {self.A.shape[1]} columns, expected {n}")
        if self.lower.size != m or self.upper.size != m:
            raise ValueError(
                f"bounds have sizes {self.lower.size}/{self.upper.size}, A has {m} rows"
            )
        if np.any(self.lower > self.upper):
            bad = int(np.flatnonzero(self.lower > self.upper)[0])
            raise ValueError(f"lower > upper in row {bad}")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise ValueError("bounds contain NaN")
        asym = _absmax(self.P - self.P.T)
        if asym > 1e-10 * max(1.0, _absmax(self.P)):
            raise ValueError(f"P is not symmetric (max asymmetry {asym:.3g})")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.P @ z) + self.q @ z)


@dataclass(frozen=True)
class SolverSettings:
    abs_tol: float = 1e-7
    rel_tol: float = 1e-7
    max_iterations: int = 50000
    infeasibility_tol: float = 1e-9
    seed: int = 0
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    # regularization added to the linear systems only
    regularization: float = 1e-9
    scaling_iterations: int = 10
    check_interval: int = 25
    polish: bool = True
    polish_refinement: int = 5
    # "admm" (operator splitting) or "ipm" (interior point)
    method: str = "ipm"
    ipm_max_iterations: int = 200
    # normalized Farkas-certificate tolerance used by the interior-point method
    certificate_tol: float = 1e-8

    def __post_init__(self):
        if self.method not in ("admm", "ipm"):
            raise ValueError("method must be 'admm' or 'ipm'")
        for name in ("abs_tol", "rel_tol", "infeasibility_tol", "rho", "sigma", "regularization"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")


@dataclass
class QpSolution:
    z: np.ndarray
    status: QpStatus
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    y: np.ndarray = field(repr=False, default=None)
    polished: bool = False

    @property
    def optimal(self) -> bool:
        """Solved, possibly to the reduced accuracy of ``OPTIMAL_INACCURATE``."""
        return self.status in (QpStatus.OPTIMAL, QpStatus.OPTIMAL_INACCURATE)


class _Factor:
    """Factorization of the ADMM x-update system for fixed (P, A, rho)."""

    def __init__(self, P, A, sigma, rho):
        n = P.shape[0]
        self.n = n
        self.A = A
        self.rho = rho
        if n <= _DENSE_LIMIT:
            Pd = P.toarray() if sp.issparse(P) else P
            if sp.issparse(A):
                AtRA = (A.T @ sp.diags(rho) @ A).toarray()
            else:
                AtRA = A.T @ (rho[:, None] * A)
            K = Pd + sigma * np.eye(n) + AtRA
            self.kind = "dense"
            self.cho = sla.cho_factor(K, lower=False, check_finite=False)
        else:
            Ps = sp.csc_matrix(P)
            As = sp.csc_matrix(A)
            K = sp.bmat(
                [[Ps + sigma * sp.eye(n), As.T], [As, -sp.diags(1.0 / rho)]], format="csc"
            )
            self.kind = "sparse"
            self.lu = spla.splu(K)

    def solve(self, rhs_x, z, y):
        if self.kind == "dense":
            r = rhs_x + self.A.T @ (self.rho * z - y)
            x = sla.cho_solve(self.cho, r, check_finite=False)
            return x, self.A @ x
        rhs = np.concatenate([rhs_x, z - y / self.rho])
        sol = self.lu.solve(rhs)
        x = sol[: self.n]
        nu = sol[self.n :]
        return x, z + (nu - y) / self.rho


def _ruiz(P, q, A, iterations):
    """Modified Ruiz equilibration; returns scaled data and scaling vectors."""
    n, m = q.size, A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    c = 1.0
    is_sparse = sp.issparse(A)
    Ps = P.copy()
    As = A.copy()
    qs = q.copy()

    def col_norms(M):
        if M.shape[0] == 0:
            return np.zeros(M.shape[1])
        if sp.issparse(M):
            return np.asarray(abs(M).max(axis=0).todense()).ravel()
        return np.max(np.abs(M), axis=0)

    def row_norms(M):
        if M.shape[1] == 0 or M.shape[0] == 0:
            return np.zeros(M.shape[0])
        if sp.issparse(M):
            return np.asarray(abs(M).max(axis=1).todense()).ravel()
        return np.max(np.abs(M), axis=1)

    def limit(v):
        v = v.copy()
        v[v < 1e-4] = 1.0
        return np.minimum(v, 1e4)

    for _ in range(iterations):
        dn = 1.0 / np.sqrt(limit(np.maximum(col_norms(Ps), col_norms(As))))
        em = 1.0 / np.sqrt(limit(row_norms(As))) if m else E
        if is_sparse or sp.issparse(Ps):
            Ps = sp.diags(dn) @ Ps @ sp.diags(dn)
        else:
            Ps = dn[:, None] * Ps * dn[None, :]
        if m:
            As = (sp.diags(em) @ As @ sp.diags(dn)) if is_sparse else em[:, None] * As * dn[None, :]
        qs = dn * qs
        D *= dn
        if m:
            E *= em
        pn = col_norms(Ps)
        gamma = 1.0 / max(limit(np.array([np.mean(pn) if pn.size else 0.0]))[0],
                          limit(np.array([np.max(np.abs(qs)) if qs.size else 0.0]))[0])
        Ps = Ps * gamma
        qs = qs * gamma
        c *= gamma
    if sp.issparse(Ps):
        Ps = sp.csc_matrix(Ps)
    if is_sparse:
        As = sp.csc_matrix(As)
    return Ps, qs, As, D, E, c


class QpSolver:
    """ADMM solver bound to fixed ``P`` and ``A``.

    Scaling and factorizations are computed once per ``(P, A)`` pair and reused
    by every :meth:`solve` call, so a receding-horizon loop that only changes
    ``q`` and the bounds pays for the factorization once.
    """

    def __init__(self, P, A, settings: SolverSettings | None = None):
        self.settings = settings or SolverSettings()
        self.P = _as_matrix(P)
        n = self.P.shape[0]
        self.A = _as_matrix(A, (0, n))
        self._ipm = None
        if self.settings.method == "ipm":
            from .ipm import InteriorPointSolver

            self._ipm = InteriorPointSolver(self.P, self.A, self.settings)
            return
        if sp.issparse(self.A) and max(self.A.shape) <= _DENSE_LIMIT and self.P.shape[0] <= _DENSE_LIMIT:
            self.A = self.A.toarray()
        if sp.issparse(self.A):
            self.P = sp.csc_matrix(self.P)
        elif sp.issparse(self.P):
            self.P = self.P.toarray()
        s = self.settings
        dummy_q = np.zeros(n)
        self._Ps, _, self._As, self._D, self._E, self._c = _ruiz(
            self.P, dummy_q, self.A, s.scaling_iterations
        )
        self._factors: dict[bytes, _Factor] = {}

    @classmethod
    def for_problem(cls, problem: QuadraticProgram, settings=None) -> "QpSolver":
        return cls(problem.P, problem.A, settings)

    def _factor(self, rho):
        key = rho.tobytes()
        f = self._factors.get(key)
        if f is None:
            if len(self._factors) > 8:
                self._factors.clear()
            f = _Factor(self._Ps, self._As, self.settings.sigma, rho)
            self._factors[key] = f
        return f

    def _rho_vector(self, l, u, rho):
        m = l.size
        r = np.full(m, rho)
        free = np.isinf(l) & np.isinf(u)
        fin = np.isfinite(l) & np.isfinite(u)
        eq = fin & (np.abs(u - l) <= 1e-10 * np.maximum(1.0, np.abs(np.where(fin, l, 0.0))))
        r[eq & ~free] = min(_RHO_MAX, rho * _RHO_EQ_SCALE)
        r[free] = _RHO_MIN
        return r

    def solve(self, q, lower, upper) -> QpSolution:
        s = self.settings
        P, A = self.P, self.A
        q = np.asarray(q, dtype=float).ravel()
        l = np.asarray(lower, dtype=float).ravel()
        u = np.asarray(upper, dtype=float).ravel()
        n, m = q.size, l.size
        if q.size != P.shape[0] or m != A.shape[0] or u.size != m:
            raise ValueError("dimension mismatch between problem data and solver")
        if np.any(l > u):
            raise ValueError("lower > upper")
        if self._ipm is not None:
            return self._ipm.solve(q, l, u)
        D, E, c = self._D, self._E, self._c
        qs = c * D * q
        ls = E * l
        us = E * u
        Ps, As = self._Ps, self._As

        rho_scalar = s.rho
        rho = self._rho_vector(ls, us, rho_scalar)
        fac = self._factor(rho)

        x = np.zeros(n)
        z = np.zeros(m)
        y = np.zeros(m)
        x_prev = x.copy()
        y_prev = y.copy()
        best = None
        last_active = None
        k = 0
        q_norm = np.max(np.abs(q)) if n else 0.0
        status = QpStatus.MAX_ITERATIONS
        while k < s.max_iterations:
            k += 1
            x_prev, y_prev = x, y
            xt, zt = fac.solve(s.sigma * x - qs, z, y)
            x = s.alpha * xt + (1 - s.alpha) * x
            zr = s.alpha * zt + (1 - s.alpha) * z
            z_new = np.clip(zr + y / rho, ls, us)
            y = y + rho * (zr - z_new)
            z = z_new

            if k % s.check_interval and k != s.max_iterations:
                continue
            # unscaled residuals
            xu = D * x
            zu = z / E if m else z
            yu = E * y / c if m else y
            Ax = A @ xu if m else np.zeros(0)
            Px = P @ xu
            Aty = A.T @ yu if m else np.zeros(n)
            r_prim = np.max(np.abs(Ax - zu)) if m else 0.0
            r_dual = np.max(np.abs(Px + q + Aty)) if n else 0.0
            eps_prim = s.abs_tol + s.rel_tol * max(
                np.max(np.abs(Ax)) if m else 0.0, np.max(np.abs(zu)) if m else 0.0
            )
            eps_dual = s.abs_tol + s.rel_tol * max(
                np.max(np.abs(Px)) if n else 0.0, np.max(np.abs(Aty)) if n else 0.0, q_norm
            )
            best = (xu, zu, yu, r_prim, r_dual)
            if r_prim <= eps_prim and r_dual <= eps_dual:
                status = QpStatus.OPTIMAL
                break

            if s.polish and m:
                active = self._active_set(z, y, ls, us)
                key = (active[0].tobytes(), active[1].tobytes())
                loose = r_prim <= 1e3 * eps_prim + 1e-3 and r_dual <= 1e3 * eps_dual + 1e-3
                if loose and key != last_active:
                    last_active = key
                    pol = self._polish(q, l, u, qs, ls, us, active)
                    if pol is not None:
                        return replace(pol, iterations=k)

            if m and self._primal_infeasible(y - y_prev, l, u):
                status = QpStatus.INFEASIBLE
                break
            if self._dual_infeasible(x - x_prev, q, l, u):
                status = QpStatus.UNBOUNDED
                break

            # adaptive step size
            if m and k % (8 * s.check_interval) == 0:
                Axs = As @ x
                prim_s = np.max(np.abs(Axs - z)) / max(np.max(np.abs(Axs)), np.max(np.abs(z)), 1e-12)
                Pxs = Ps @ x
                Atys = As.T @ y
                dual_s = np.max(np.abs(Pxs + qs + Atys)) / max(
                    np.max(np.abs(Pxs)), np.max(np.abs(Atys)), np.max(np.abs(qs)), 1e-12
                )
                ratio = np.sqrt(prim_s / max(dual_s, 1e-30))
                new_rho = float(np.clip(rho_scalar * ratio, _RHO_MIN, _RHO_MAX))
                if new_rho > 5 * rho_scalar or new_rho < rho_scalar / 5:
                    rho_scalar = new_rho
                    rho = self._rho_vector(ls, us, rho_scalar)
                    fac = self._factor(rho)

        xu, zu, yu, r_prim, r_dual = best
        if status is QpStatus.OPTIMAL and s.polish and m:
            pol = self._polish(q, l, u, qs, ls, us, self._active_set(z, y, ls, us))
            if pol is not None and pol.primal_residual <= max(r_prim, s.abs_tol) and pol.dual_residual <= max(r_dual, s.abs_tol):
                return replace(pol, iterations=k)
        if status is QpStatus.INFEASIBLE:
            obj = np.inf
        elif status is QpStatus.UNBOUNDED:
            obj = -np.inf
        else:
            obj = float(0.5 * xu @ (P @ xu) + q @ xu)
        return QpSolution(xu, status, obj, k, float(r_prim), float(r_dual), yu)

    # ------------------------------------------------------------------
    def _active_set(self, z, y, ls, us):
        lower = (z - ls < -y) & np.isfinite(ls)
        upper = (us - z < y) & np.isfinite(us)
        both = lower & upper
        lower = lower & ~both
        return lower, upper

    def _polish(self, q, l, u, qs, ls, us, active):
        s = self.settings
        lower, upper = active
        idx = np.flatnonzero(lower | upper)
        n = q.size
        Ps, As = self._Ps, self._As
        Ared = As[idx] if not sp.issparse(As) else As[idx, :]
        b = np.where(upper[idx], us[idx], ls[idx])
        delta = s.regularization
        k_red = idx.size
        if sp.issparse(As) or sp.issparse(Ps):
            Pm = sp.csc_matrix(Ps)
            Am = sp.csc_matrix(Ared)
            K_true = sp.bmat([[Pm, Am.T], [Am, None]], format="csc") if k_red else Pm
            K_reg = K_true + sp.diags(np.concatenate([np.full(n, delta), np.full(k_red, -delta)]))
            try:
                lu = spla.splu(sp.csc_matrix(K_reg))
            except RuntimeError:
                return None
            solve = lu.solve
        else:
            K_true = np.block([[Ps, Ared.T], [Ared, np.zeros((k_red, k_red))]]) if k_red else Ps.copy()
            K_reg = K_true + np.diag(np.concatenate([np.full(n, delta), np.full(k_red, -delta)]))
            try:
                lu = sla.lu_factor(K_reg, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                return None

            def solve(r, lu=lu):
                return sla.lu_solve(lu, r, check_finite=False)

        rhs = np.concatenate([-qs, b])
        sol = solve(rhs)
        for _ in range(s.polish_refinement):
            res = rhs - K_true @ sol
            sol = sol + solve(res)
        if not np.all(np.isfinite(sol)):
            return None
        xs = sol[:n]
        ys = np.zeros(ls.size)
        ys[idx] = sol[n:]
        D, E, c = self._D, self._E, self._c
        xu = D * xs
        yu = E * ys / c
        P, A = self.P, self.A
        Ax = A @ xu
        zu = np.clip(Ax, l, u)
        Px = P @ xu
        Aty = A.T @ yu
        r_prim = float(np.max(np.abs(Ax - zu)))
        r_dual = float(np.max(np.abs(Px + q + Aty)))
        eps_prim = s.abs_tol + s.rel_tol * max(np.max(np.abs(Ax)), np.max(np.abs(zu)))
        eps_dual = s.abs_tol + s.rel_tol * max(
            np.max(np.abs(Px)), np.max(np.abs(Aty)), np.max(np.abs(q)) if q.size else 0.0
        )
        # multipliers must have the sign of the bound they act on
        ytol = max(eps_dual, 1e-12)
        sign_ok = np.all(yu[lower & ~upper] <= ytol) and np.all(yu[upper & ~lower] >= -ytol)
        if r_prim <= eps_prim and r_dual <= eps_dual and sign_ok:
            obj = float(0.5 * xu @ Px + q @ xu)
            return QpSolution(xu, QpStatus.OPTIMAL, obj, 0, r_prim, r_dual, yu, True)
        return None

    def _primal_infeasible(self, dy, l, u):
        tol = self.settings.infeasibility_tol
        dyu = self._E * dy / self._c
        nrm = np.max(np.abs(dyu))
        if nrm < 1e-30:
            return False
        dyu = dyu / nrm
        if np.any((dyu > tol) & np.isinf(u)) or np.any((dyu < -tol) & np.isinf(l)):
            return False
        if np.max(np.abs(self.A.T @ dyu)) > tol:
            return False
        up = np.where(np.isfinite(u), u, 0.0)
        lo = np.where(np.isfinite(l), l, 0.0)
        return float(up @ np.maximum(dyu, 0) + lo @ np.minimum(dyu, 0)) < -tol

    def _dual_infeasible(self, dx, q, l, u):
        tol = self.settings.infeasibility_tol
        dxu = self._D * dx
        nrm = np.max(np.abs(dxu)) if dxu.size else 0.0
        if nrm < 1e-30:
            return False
        dxu = dxu / nrm
        if np.max(np.abs(self.P @ dxu)) > tol or q @ dxu > -tol:
            return False
        if l.size == 0:
            return True
        Adx = self.A @ dxu
        fin_l = np.isfinite(l)
        fin_u = np.isfinite(u)
        if np.any(fin_u & (Adx > tol)) or np.any(fin_l & (Adx < -tol)):
            return False
        return True


def solve_qp(problem: QuadraticProgram, settings: SolverSettings | None = None) -> QpSolution:
    """Solve ``problem``; non-optimal outcomes are reported through ``status``."""
    solver = QpSolver.for_problem(problem, settings)
    return solver.solve(problem.q, problem.lower, problem.upper)


def solve_lp(c, A, lower, upper, settings: SolverSettings | None = None) -> QpSolution:
    """Minimize ``c'z`` subject to ``lower <= Az <= upper``.

    Maximization is ``solve_lp(-c, ...)`` with the objective sign flipped back
    by the caller. Unbounded problems come back with status ``UNBOUNDED``.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    P = sp.csc_matrix((n, n)) if sp.issparse(A) else np.zeros((n, n))
    return solve_qp(QuadraticProgram(P, c, A, lower, upper), settings)


@dataclass
class KktReport:
    stationarity: float
    primal_feasibility: float
    complementarity: float
    y: np.ndarray = field(repr=False)

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.primal_feasibility, self.complementarity)


def check_kkt(problem: QuadraticProgram, z, y=None, active_tol: float = 1e-6) -> KktReport:
    """KKT residuals of ``z`` (and multipliers ``y``) for ``problem``.

    When ``y`` is omitted the multipliers are estimated by a sign-constrained
    least-squares fit of the stationarity condition over the constraints that
    are active at ``z`` within ``active_tol``.
    """
    from scipy.optimize import lsq_linear

    z = np.asarray(z, dtype=float).ravel()
    if z.size != problem.n:
        raise ValueError(f"z has size {z.size}, expected {problem.n}")
    P, A, q, l, u = problem.P, problem.A, problem.q, problem.lower, problem.upper
    Az = A @ z if problem.m else np.zeros(0)
    viol = np.maximum(l - Az, 0) + np.maximum(Az - u, 0)
    primal = float(np.max(viol)) if viol.size else 0.0
    grad = P @ z + q
    if y is None:
        if problem.m:
            scale = np.maximum(1.0, np.abs(Az))
            at_l = np.isfinite(l) & (Az - l <= active_tol * scale)
            at_u = np.isfinite(u) & (u - Az <= active_tol * scale)
            act = np.flatnonzero(at_l | at_u)
        else:
            act = np.zeros(0, dtype=int)
        y = np.zeros(problem.m)
        if act.size:
            Aact = A[act].toarray() if sp.issparse(A) else A[act]
            lb = np.where(at_l[act], -np.inf, 0.0)
            ub = np.where(at_u[act], np.inf, 0.0)
            lb = np.where(lb == ub, -1e-300, lb)  # lsq_linear needs lb < ub
            res = lsq_linear(Aact.T, -grad, bounds=(lb, ub), lsq_solver="exact")
            y[act] = res.x
    else:
        y = np.asarray(y, dtype=float).ravel()
    stat = float(np.max(np.abs(grad + A.T @ y))) if problem.n else 0.0
    if problem.m:
        slack_u = np.where(np.isfinite(u), u - Az, np.inf)
        slack_l = np.where(np.isfinite(l), Az - l, np.inf)
        yp = np.maximum(y, 0)
        yn = np.maximum(-y, 0)
        comp_u = np.where(yp > 0, yp * np.where(np.isfinite(slack_u), np.abs(slack_u), np.inf), 0.0)
        comp_l = np.where(yn > 0, yn * np.where(np.isfinite(slack_l), np.abs(slack_l), np.inf), 0.0)
        comp = float(max(np.max(comp_u), np.max(comp_l)))
    else:
        comp = 0.0
    return KktReport(stat, primal, comp, y)
