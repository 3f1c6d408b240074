"""Assembly of the robust, scenario and backup problems as reusable QP templates.

Every builder produces a constraint matrix and Hessian that do not depend on
the measured state, so one factorization serves a whole closed-loop run. The
state ``x0``, the known-input forecast ``v`` and the constraint schedule only
move the linear cost and the row bounds.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..qp import QpSolution, QpSolver, QuadraticProgram, SolverSettings
from ..scenarios import LiftedScenarioSet, MomentEstimates
from ..svc import SvcUncertaintySet
from .objective import QuadraticCost
from .spec import ControlSpec, ControllerKind, DecisionLayout, PolicyDecision, RectSet

__all__ = [
    "StageRows",
    "BuiltProblem",
    "PolicySolution",
    "ProblemTemplate",
    "ddro_template",
    "ssmpc_template",
    "rect_template",
    "backup_template",
    "solve_policy",
    "DDRO_FORMS",
]


class StageRows:
    """Stacked state-constraint rows ``F x_t <= f_t`` for ``t = 1..H``.

    Row ``r`` of stage ``t`` reads ``b_r h + (b_r M) phi_c + aw_r w + Fx_r <= f_r``
    where ``Fx`` is the constraint applied to the free response.
    """

    def __init__(self, spec: ControlSpec, pred=None):
        pred = pred if pred is not None else spec.prediction()
        H = spec.H
        Fs = sp.kron(sp.eye(H), spec.F).toarray()
        self.Fs = Fs
        self.b = Fs @ pred.Bu
        self.aw = Fs @ pred.Bw
        self.n_rows = Fs.shape[0]
        self.layout = DecisionLayout(H, spec.model.n_u, spec.model.n_w)
        self.ri, self.ci = self.layout.m_index()

    def phi_coef_map(self, brow) -> np.ndarray:
        """Matrix ``T`` with ``(brow M)`` on the phi block equal to ``T m``."""
        T = np.zeros((self.layout.H * self.layout.n_w, self.layout.n_m))
        T[self.ci, np.arange(self.layout.n_m)] = brow[self.ri]
        return T

    def lifted_coef(self, r, M) -> np.ndarray:
        """Coefficient of row ``r`` on the lifted vector ``[phi_c; w]``."""
        return np.concatenate([self.b[r] @ M, self.aw[r]])

    def slack(self, x_free, f_rhs) -> np.ndarray:
        """``f - F x_free`` per stacked row."""
        return np.asarray(f_rhs, dtype=float).ravel() - self.Fs @ x_free


class _Rows:
    """COO accumulator for constraint rows."""

    def __init__(self):
        self.r, self.c, self.v = [], [], []
        self.lo, self.hi = [], []
        self.state_row = []  # stacked state row whose slack shifts the upper bound, or -1
        self.m = 0

    def add(self, cols, vals, lo, hi, state_row=-1):
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        vals = np.atleast_1d(np.asarray(vals, dtype=float))
        keep = vals != 0
        self.r.append(np.full(int(keep.sum()), self.m))
        self.c.append(cols[keep])
        self.v.append(vals[keep])
        self.lo.append(lo)
        self.hi.append(hi)
        self.state_row.append(state_row)
        self.m += 1
        return self.m - 1

    def add_block(self, rows, cols, vals, lo, hi, state_row=None):
        """Add ``k`` rows at once from COO triplets with local row ids ``0..k-1``."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        k = lo.size
        vals = np.asarray(vals, dtype=float)
        keep = vals != 0
        self.r.append(np.asarray(rows, dtype=int)[keep] + self.m)
        self.c.append(np.asarray(cols, dtype=int)[keep])
        self.v.append(vals[keep])
        self.lo.extend(lo.tolist())
        self.hi.extend(hi.tolist())
        sr = np.full(k, -1) if state_row is None else np.asarray(state_row, dtype=int)
        self.state_row.extend(sr.tolist())
        self.m += k
        return np.arange(self.m - k, self.m)

    def matrix(self, n):
        if self.m == 0:
            return sp.csc_matrix((0, n))
        return sp.csc_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
            shape=(self.m, n),
        )


@dataclass
class BuiltProblem:
    """A concrete QP plus the maps back to the policy.

    ``index`` maps names (``h``, ``m``, ``lambda``, ``z``, ``slack``, ...) to
    slices or index arrays of the QP variable.
    """

    qp: QuadraticProgram
    index: dict
    kind: ControllerKind
    constant: float
    layout: DecisionLayout
    template: "ProblemTemplate" = field(repr=False, default=None)


@dataclass
class PolicySolution:
    decision: PolicyDecision | None
    status: str
    objective: float
    qp: QpSolution
    slack: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.qp.optimal


class ProblemTemplate:
    """Fixed QP structure for one controller; :meth:`instantiate` fills in the data."""

    def __init__(self, spec: ControlSpec, moments: MomentEstimates, kind: ControllerKind,
                 settings: SolverSettings | None = None, soften: bool = False,
                 penalty: float | None = None):
        self.spec = spec
        self.kind = kind
        self.soften = soften
        self.penalty = spec.penalty_weight() if penalty is None else float(penalty)
        self.settings = settings or SolverSettings()
        self.cost = QuadraticCost(spec, moments)
        self.rows = StageRows(spec, self.cost.pred)
        self.layout = self.cost.layout
        nh, nm = self.layout.n_h, self.layout.n_m
        self.index = {"h": slice(0, nh), "m": slice(nh, nh + nm)}
        self.n = nh + nm
        self._acc = _Rows()
        self._extra_q = {}
        self._input_constraints()

    # variable allocation -------------------------------------------------
    def _alloc(self, name, k):
        sl = slice(self.n, self.n + k)
        self.n += k
        self.index[name] = sl
        return sl

    def _h_cols(self):
        return np.arange(self.index["h"].start, self.index["h"].stop)

    def _m_cols(self):
        return np.arange(self.index["m"].start, self.index["m"].stop)

    # robust input constraints ---------------------------------------------
    def _input_constraints(self):
        spec, lay = self.spec, self.layout
        H = spec.H
        Gs = sp.kron(sp.eye(H), spec.G).toarray()
        gs = np.tile(spec.g, H)
        ri, ci = self.layout.m_index()
        # the box for phi_c is [-1 - m_k, 1 - m_k]: centre -m_k, half-width 1;
        # the centre enters the bounds at instantiate time through phi_mean
        self._in_rows = []
        aux = []
        for p in range(Gs.shape[0]):
            coef_l = Gs[p, ri]
            ks = np.unique(ci[coef_l != 0])
            aux.append((p, ks, coef_l))
        total = sum(len(k) for _, k, _ in aux)
        sl = self._alloc("input_aux", total)
        off = sl.start
        hcols, mcols = self._h_cols(), self._m_cols()
        self._input_centre_rows = []
        for p, ks, coef_l in aux:
            cols_main = list(hcols)
            vals_main = list(Gs[p])
            centre_terms = []
            for k in ks:
                sel = np.flatnonzero((ci == k) & (coef_l != 0))
                s_col = off
                off += 1
                # s_k >= +-(G M)_{pk}
                self._acc.add(np.r_[s_col, mcols[sel]], np.r_[1.0, -coef_l[sel]], 0.0, np.inf)
                self._acc.add(np.r_[s_col, mcols[sel]], np.r_[1.0, coef_l[sel]], 0.0, np.inf)
                cols_main.append(s_col)
                vals_main.append(1.0)
                centre_terms.append((k, mcols[sel], coef_l[sel]))
            # the centre contribution -sum_k m_k (G M)_{pk} is linear in m with
            # phi_mean-dependent coefficients; phi_mean is fixed per template
            row_cols = np.array(cols_main, dtype=int)
            row_vals = np.array(vals_main, dtype=float)
            self._input_centre_rows.append((p, row_cols, row_vals, centre_terms))
        self._input_gs = gs

    def _finalize_inputs(self, phi_mean):
        pm = np.asarray(phi_mean, dtype=float).ravel()
        for p, cols, vals, centre in self._input_centre_rows:
            cc, vv = [cols], [vals]
            for k, mc, cl in centre:
                cc.append(mc)
                vv.append(-pm[k] * cl)
            c = np.concatenate(cc)
            v = np.concatenate(vv)
            uc, inv = np.unique(c, return_inverse=True)
            self._acc.add(uc, np.bincount(inv, weights=v), -np.inf, self._input_gs[p])

    # finishing -------------------------------------------------------------
    def _finish(self):
        if self.soften:
            # one penalized slack per stacked state row, shared by every
            # constraint row that protects it (exact penalty)
            sl = self._alloc("slack", self.rows.n_rows)
            self._extra_q["slack"] = self.penalty
            sr = np.array(self._acc.state_row, dtype=int)
            dyn = np.flatnonzero(sr >= 0)
            self._acc.r.append(dyn)
            self._acc.c.append(sl.start + sr[dyn])
            self._acc.v.append(-np.ones(dyn.size))
            for r in range(self.rows.n_rows):
                self._acc.add([sl.start + r], [1.0], 0.0, np.inf)
        A = self._acc.matrix(self.n)
        P = sp.lil_matrix((self.n, self.n))
        k = self.cost.P.shape[0]
        P[:k, :k] = self.cost.P
        self.P = sp.csc_matrix(P)
        self.A = A
        self.lo = np.array(self._acc.lo, dtype=float)
        self.hi = np.array(self._acc.hi, dtype=float)
        self.state_row = np.array(self._acc.state_row, dtype=int)
        self.dyn = np.flatnonzero(self.state_row >= 0)
        self.q_extra = np.zeros(self.n)
        for name, val in self._extra_q.items():
            self.q_extra[self.index[name]] = val
        self._solver = None
        del self._acc

    @property
    def solver(self) -> QpSolver:
        if self._solver is None:
            self._solver = QpSolver(self.P, self.A, self.settings)
        return self._solver

    def data(self, x0, v=None, t0: int = 0):
        x_free = self.cost.free_response(x0, v)
        q_obj, C = self.cost.linear(x_free)
        q = self.q_extra.copy()
        q[: q_obj.size] += q_obj
        hi = self.hi.copy()
        slack = self.rows.slack(x_free, self.spec.f_rhs(t0))
        hi[self.dyn] += slack[self.state_row[self.dyn]]
        return q, self.lo, hi, C

    def instantiate(self, x0, v=None, t0: int = 0) -> BuiltProblem:
        q, lo, hi, C = self.data(x0, v, t0)
        qp = QuadraticProgram(self.P, q, self.A, lo, hi)
        return BuiltProblem(qp, dict(self.index), self.kind, C, self.layout, self)

    def solve(self, x0, v=None, t0: int = 0) -> PolicySolution:
        q, lo, hi, C = self.data(x0, v, t0)
        sol = self.solver.solve(q, lo, hi)
        return _extract(sol, self.index, self.layout, C, self.q_extra)


def _extract(sol: QpSolution, index, layout: DecisionLayout, C, q_extra=None) -> PolicySolution:
    if not sol.optimal:
        return PolicySolution(None, sol.status.value, np.nan, sol)
    z = sol.z
    dec = PolicyDecision(layout.to_matrix(z[index["m"]]), z[index["h"]], layout.n_u, layout.n_w)
    obj = sol.objective + C
    slack = None
    if "slack" in index:
        slack = z[index["slack"]].copy()
        obj -= float(q_extra[index["slack"]] @ slack)
    return PolicySolution(dec, sol.status.value, obj, sol, slack)


def solve_policy(problem: BuiltProblem, settings: SolverSettings | None = None) -> PolicySolution:
    """Solve a built problem and map the solution back to ``(M, h)``.

    ``objective`` is the expected cost; for the backup problem the penalty is
    excluded and reported through ``slack``.
    """
    from ..qp import solve_qp

    sol = solve_qp(problem.qp, settings)
    q_extra = np.zeros(problem.qp.n)
    if "slack" in problem.index:
        q_extra[problem.index["slack"]] = problem.qp.q[problem.index["slack"]]
    return _extract(sol, problem.index, problem.layout, problem.constant, q_extra)


# -------------------------------------------------------------------------------
# DDRO: robust counterpart over the SVC polytope
# -------------------------------------------------------------------------------
def _stage_sets(spec: ControlSpec, uset):
    """Per-stage ``(set, lifted coordinates)``; a single set serves every stage."""
    H, n_w = spec.H, spec.model.n_w
    half = H * n_w
    if isinstance(uset, SvcUncertaintySet):
        if uset.d != spec.n_lifted:
            raise ValueError(f"set dimension {uset.d} does not match the lifted dimension "
                             f"{spec.n_lifted}")
        return [(uset, np.arange(2 * half))] * H
    sets = list(uset)
    if len(sets) != H:
        raise ValueError(f"stage-wise DDRO needs {H} sets, got {len(sets)}")
    out = []
    for t, u in enumerate(sets, start=1):
        k = t * n_w
        if u.d != 2 * k:
            raise ValueError(f"stage-{t} set has dimension {u.d}, expected {2 * k}")
        out.append((u, np.r_[np.arange(k), half + np.arange(k)]))
    return out


def _row_coefficients(rows: StageRows, r: int, coords, half):
    """Row ``r``'s lifted coefficient ``a = [T m; aw]`` restricted to ``coords``:
    returns ``(T_sub, aw_sub)`` with ``a_sub = [T_sub m; aw_sub]`` split at ``len(coords) // 2``."""
    T = rows.phi_coef_map(rows.b[r])
    full_T = np.vstack([T, np.zeros((half, T.shape[1]))])
    full_w = np.r_[np.zeros(half), rows.aw[r]]
    dropped = np.setdiff1d(np.arange(2 * half), coords)
    if np.any(full_T[dropped] != 0) or np.any(full_w[dropped] != 0):
        raise ValueError(f"row {r} depends on coordinates outside its stage set")
    return full_T[coords], full_w[coords]


def _ddro_pairs(tpl: ProblemTemplate, stage_sets):
    """Per-SV dual vectors: ``lambda_r`` and ``z_{r,i}`` for each stacked row ``r``.

    With ``Q`` invertible the equality ``Q sum_i z_i = a`` is imposed as
    ``sum_i z_i = Q^{-1} a``, which keeps the blocks on ``z`` sparse.
    """
    rows = tpl.rows
    R = rows.n_rows
    n_f = tpl.spec.n_state_rows
    half = tpl.spec.H * tpl.spec.model.n_w
    sizes = [stage_sets[r // n_f][0].n_sv * stage_sets[r // n_f][0].d for r in range(R)]
    lam = tpl._alloc("lambda", R)
    zsl = tpl._alloc("z", int(sum(sizes)))
    hcols, mcols = tpl._h_cols(), tpl._m_cols()
    acc = tpl._acc
    zoff = zsl.start
    for r in range(R):
        uset, coords = stage_sets[r // n_f]
        ns, d = uset.n_sv, uset.d
        Qinv = np.linalg.inv(uset.Q)
        qw = uset.sv_points @ uset.Q.T  # row i: Q w_i
        zcols = zoff + np.arange(ns * d)
        zoff += ns * d
        lcol = lam.start + r
        Ta, awa = _row_coefficients(rows, r, coords, half)
        # sum_i z_i - Qinv T m = Qinv aw
        Mc = -(Qinv @ Ta)
        rhs = Qinv @ awa
        loc_d = np.arange(d)
        er = np.concatenate([np.tile(loc_d, ns), np.repeat(loc_d, mcols.size)])
        ec = np.concatenate([zcols, np.tile(mcols, d)])
        ev = np.concatenate([np.ones(ns * d), Mc.ravel()])
        acc.add_block(er, ec, ev, rhs, rhs)
        # |z_{i,k}| <= lambda alpha_i, written as two rows per entry
        k = ns * d
        alpha_rep = np.repeat(uset.alphas, d)
        loc = np.arange(k)
        acc.add_block(np.r_[loc, loc], np.r_[zcols, np.full(k, lcol)],
                      np.r_[np.ones(k), -alpha_rep], np.full(k, -np.inf), np.zeros(k))
        acc.add_block(np.r_[loc, loc], np.r_[zcols, np.full(k, lcol)],
                      np.r_[np.ones(k), alpha_rep], np.zeros(k), np.full(k, np.inf))
        # sum_i z_i'Q w_i + radius lambda + b_r h <= f_r - F x_free
        acc.add(np.r_[zcols, lcol, hcols], np.r_[qw.ravel(), uset.radius, rows.b[r]],
                -np.inf, 0.0, state_row=r)


def _knapsack_pieces(c, alphas):
    """Affine pieces ``(slope, intercept)`` of ``psi(s) = min sum_i y_i c_i``
    over ``sum_i y_i = s, |y_i| <= alpha_i``.

    ``psi`` is convex and piecewise linear on ``[-sum alpha, sum alpha]``: the
    greedy solution raises the cheapest ``y_i`` first.
    """
    order = np.argsort(c, kind="stable")
    cs, a = c[order], alphas[order]
    s_start = -a.sum() + np.concatenate([[0.0], np.cumsum(2 * a)[:-1]])
    psi_start = -(a @ cs) + np.concatenate([[0.0], np.cumsum(2 * a * cs)[:-1]])
    return cs, psi_start - cs * s_start


def _ddro_compact(tpl: ProblemTemplate, stage_sets):
    """Same robust counterpart with the per-SV duals eliminated.

    For fixed ``lambda`` the dual separates over coordinates ``k`` into
    fractional knapsacks whose value is ``lambda psi_k(g_k / lambda)`` with
    ``g = Q^{-1} a``. That perspective is the maximum of the affine pieces
    ``c g_k + beta lambda`` on ``|g_k| <= lambda sum(alpha)``, so one epigraph
    variable ``t_{r,k}`` per coordinate replaces ``n_sv`` dual vectors.
    """
    rows = tpl.rows
    R = rows.n_rows
    n_f = tpl.spec.n_state_rows
    half = tpl.spec.H * tpl.spec.model.n_w
    cache = {}
    lam = tpl._alloc("lambda", R)
    tsl = tpl._alloc("t", int(sum(stage_sets[r // n_f][0].d for r in range(R))))
    hcols, mcols = tpl._h_cols(), tpl._m_cols()
    acc = tpl._acc
    toff = tsl.start
    for r in range(R):
        uset, coords = stage_sets[r // n_f]
        key = id(uset)
        if key not in cache:
            C = uset.sv_points @ uset.Q.T
            cache[key] = (np.linalg.inv(uset.Q),
                          [_knapsack_pieces(C[:, k], uset.alphas) for k in range(uset.d)])
        Qinv, pieces = cache[key]
        d = uset.d
        a_sum = float(uset.alphas.sum())
        Ta, awa = _row_coefficients(rows, r, coords, half)
        Gm = Qinv @ Ta
        g0 = Qinv @ awa
        lcol = lam.start + r
        tcols = toff + np.arange(d)
        toff += d
        used = np.flatnonzero(np.any(Gm != 0, axis=0))
        mc = mcols[used]
        for k in range(d):
            slope, beta = pieces[k]
            npc = slope.size
            # t_k - slope (Gm_k m) - beta lambda >= slope g0_k
            cols = np.concatenate([np.full(npc, tcols[k]), np.full(npc, lcol),
                                   np.tile(mc, npc)])
            vals = np.concatenate([np.ones(npc), -beta,
                                   -(slope[:, None] * Gm[k, used][None, :]).ravel()])
            er = np.concatenate([np.arange(npc), np.arange(npc),
                                 np.repeat(np.arange(npc), mc.size)])
            acc.add_block(er, cols, vals, slope * g0[k], np.full(npc, np.inf))
            # |g_k| <= lambda sum(alpha)
            acc.add(np.r_[lcol, mc], np.r_[-a_sum, Gm[k, used]], -np.inf, -g0[k])
            acc.add(np.r_[lcol, mc], np.r_[-a_sum, -Gm[k, used]], -np.inf, g0[k])
        acc.add(np.r_[tcols, lcol, hcols], np.r_[np.ones(d), uset.radius, rows.b[r]],
                -np.inf, 0.0, state_row=r)


DDRO_FORMS = ("compact", "pairs")


def ddro_template(spec: ControlSpec, uset, moments: MomentEstimates,
                  settings: SolverSettings | None = None, soften: bool = False,
                  form: str = "compact", penalty: float | None = None) -> ProblemTemplate:
    """Robust counterpart of the state constraints over calibrated SVC sets.

    ``uset`` is either one set over the full lifted vector, reused at every
    stage with zero coefficients beyond the stage, or a sequence of ``H``
    stage sets where set ``t`` lives on ``[phi_1..phi_t; w_1..w_t]``.

    ``form="pairs"`` keeps one dual vector per support vector and row;
    ``form="compact"`` (default) is the equivalent reduced LP with ``d``
    epigraph variables per row, which is far smaller for the solver.
    """
    if form not in DDRO_FORMS:
        raise ValueError(f"form must be one of {DDRO_FORMS}")
    stage_sets = _stage_sets(spec, uset)
    for u, _ in stage_sets:
        if u.phi_mean is None:
            raise ValueError("the uncertainty set must carry the phi_mean used for lifting")
        if not u.calibrated:
            raise ValueError("the uncertainty set has not been calibrated")
    kind = ControllerKind.BACKUP if soften else ControllerKind.DRMPC
    tpl = ProblemTemplate(spec, moments, kind, settings, soften, penalty)
    last = stage_sets[-1][0]
    tpl._finalize_inputs(last.phi_mean)
    (_ddro_compact if form == "compact" else _ddro_pairs)(tpl, stage_sets)
    tpl._finish()
    return tpl


def backup_template(spec, uset, moments, settings=None, form: str = "compact",
                    penalty: float | None = None) -> ProblemTemplate:
    """Softened DDRO: each robust state row gets a penalized slack; always feasible.

    ``penalty`` overrides the slack weight of :meth:`ControlSpec.penalty_weight`.
    """
    return ddro_template(spec, uset, moments, settings, soften=True, form=form, penalty=penalty)


# -------------------------------------------------------------------------------
# SSMPC: one hard constraint per (row, scenario)
# -------------------------------------------------------------------------------
def ssmpc_template(spec: ControlSpec, lifted: LiftedScenarioSet, moments: MomentEstimates,
                   settings: SolverSettings | None = None, soften: bool = False) -> ProblemTemplate:
    kind = ControllerKind.BACKUP if soften else ControllerKind.SSMPC
    tpl = ProblemTemplate(spec, moments, kind, settings, soften)
    tpl._finalize_inputs(lifted.phi_mean)
    rows = tpl.rows
    R, N = rows.n_rows, lifted.N
    phi, w = lifted.phi, lifted.w
    hcols, mcols = tpl._h_cols(), tpl._m_cols()
    ri, ci = rows.ri, rows.ci
    for r in range(R):
        coef_m = rows.b[r][ri][None, :] * phi[:, ci]  # (N, n_m)
        coef_h = np.broadcast_to(rows.b[r], (N, hcols.size))
        vals = np.hstack([coef_h, coef_m])
        cols = np.r_[hcols, mcols]
        er = np.repeat(np.arange(N), cols.size)
        ec = np.tile(cols, N)
        base = -(w @ rows.aw[r])
        tpl._acc.add_block(er, ec, vals.ravel(), np.full(N, -np.inf), base,
                           state_row=np.full(N, r))
    tpl._finish()
    return tpl


# -------------------------------------------------------------------------------
# RMPC: robust constraints over the lifted box of a hyper-rectangle
# -------------------------------------------------------------------------------
def rect_template(spec: ControlSpec, rect: RectSet, phi_mean, moments: MomentEstimates,
                  settings: SolverSettings | None = None, soften: bool = False) -> ProblemTemplate:
    kind = ControllerKind.BACKUP if soften else ControllerKind.RMPC
    tpl = ProblemTemplate(spec, moments, kind, settings, soften)
    tpl._finalize_inputs(phi_mean)
    rows = tpl.rows
    half = spec.H * spec.model.n_w
    lo, hi = rect.lifted_box(spec.saturation, phi_mean)
    if lo.size != 2 * half:
        raise ValueError("rectangle dimension does not match H * n_w")
    ctr, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
    hcols, mcols = tpl._h_cols(), tpl._m_cols()
    ri, ci = rows.ri, rows.ci
    supports = []
    for r in range(rows.n_rows):
        coef_l = rows.b[r][ri]
        supports.append(np.unique(ci[coef_l != 0]))
    aux = tpl._alloc("rect_aux", sum(len(s) for s in supports))
    off = aux.start
    for r in range(rows.n_rows):
        coef_l = rows.b[r][ri]
        cols, vals = [hcols], [rows.b[r]]
        for k in supports[r]:
            sel = np.flatnonzero((ci == k) & (coef_l != 0))
            tpl._acc.add(np.r_[off, mcols[sel]], np.r_[1.0, -coef_l[sel]], 0.0, np.inf)
            tpl._acc.add(np.r_[off, mcols[sel]], np.r_[1.0, coef_l[sel]], 0.0, np.inf)
            cols += [mcols[sel], [off]]
            vals += [ctr[k] * coef_l[sel], [rad[k]]]
            off += 1
        aw = rows.aw[r]
        w_sup = float(aw @ ctr[half:] + np.abs(aw) @ rad[half:])
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        uc, inv = np.unique(c, return_inverse=True)
        tpl._acc.add(uc, np.bincount(inv, weights=v), -np.inf, -w_sup, state_row=r)
    tpl._finish()
    return tpl
