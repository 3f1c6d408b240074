"""Independent checks of solved policies.

The worst cases here are computed by maximizing over the uncertainty region
directly (an LP over the SVC polytope, interval arithmetic over a box, or a
maximum over scenarios), never through the dual encoding used by the
controllers. The LPs go to SciPy's HiGHS rather than the package's own
solver, so they are independent of it and usable as oracles for the robust
counterparts.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ..scenarios import LiftedScenarioSet
from ..svc import SvcUncertaintySet
from .problem import StageRows, _knapsack_pieces, _stage_sets
from .spec import ControlSpec, PolicyDecision, RectSet

__all__ = [
    "svc_support",
    "svc_dual_support",
    "box_support",
    "scenario_support",
    "worst_case_violation",
    "input_violation_sampled",
    "input_violation_exact",
]



def _linprog(c, A, lo, hi):
    """``min c'x`` over free ``x`` with ``lo <= A x <= hi``; returns the HiGHS result."""
    A = sp.csr_matrix(A)
    up, dn = np.isfinite(hi), np.isfinite(lo)
    A_ub = sp.vstack([A[up], -A[dn]], format="csr")
    b_ub = np.concatenate([hi[up], -lo[dn]])
    return linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(None, None), method="highs",
                   options={"primal_feasibility_tolerance": 1e-9,
                            "dual_feasibility_tolerance": 1e-9})


def svc_support(uset: SvcUncertaintySet, a) -> float:
    """``max a'w`` over ``{w : sum_i alpha_i ||Q(w - w_i)||_1 <= radius}``.

    Solved in the sphered coordinates ``y = Q w`` as an LP in ``(y, v)`` with
    ``v_{ik} >= |y_k - (Q w_i)_k|``; this keeps the constraint matrix at
    unit scale however badly conditioned ``Q`` is.
    """
    a = np.asarray(a, dtype=float).ravel()
    d, ns = uset.d, uset.n_sv
    if a.size != d:
        raise ValueError(f"coefficient has size {a.size}, set has dimension {d}")
    if not np.any(a):
        return 0.0
    Q = uset.Q
    g = np.linalg.solve(Q.T, a)  # a'w = g'y
    qw = (uset.sv_points @ Q.T).ravel()  # (i, k) row-major
    nv = ns * d
    Irep = sp.kron(sp.csr_matrix(np.ones((ns, 1))), sp.eye(d))
    I = sp.eye(nv)
    # v - y >= -Q w_i  and  v + y >= Q w_i
    A = sp.vstack([
        sp.hstack([-Irep, I]),
        sp.hstack([Irep, I]),
        sp.hstack([sp.csr_matrix((1, d)), sp.csr_matrix(np.repeat(uset.alphas, d)[None, :])]),
    ], format="csc")
    lo = np.concatenate([-qw, qw, [-np.inf]])
    hi = np.concatenate([np.full(2 * nv, np.inf), [uset.radius]])
    c = np.concatenate([-g, np.zeros(nv)])
    res = _linprog(c, A, lo, hi)
    if res.status == 2:
        raise ValueError("the uncertainty set is empty")
    if res.status != 0:
        raise RuntimeError(f"support LP failed: {res.message}")
    return float(g @ res.x[:d])


def svc_dual_support(uset: SvcUncertaintySet, a, form: str = "pairs") -> float:
    """Value of the dual encoding used by the robust counterpart.

    ``form="pairs"`` minimizes ``sum_i z_i'Q w_i + radius lambda`` over
    ``sum_i z_i = Q^{-T} a``, ``|z_ik| <= lambda alpha_i``; ``form="compact"``
    is the reduced LP with one epigraph variable per coordinate.
    """
    a = np.asarray(a, dtype=float).ravel()
    d, ns = uset.d, uset.n_sv
    g = np.linalg.solve(uset.Q.T, a)
    C = uset.sv_points @ uset.Q.T
    if form == "pairs":
        nz = ns * d
        # variables [lambda, z (i, k) row-major]
        E = sp.hstack([sp.csr_matrix((d, 1)),
                       sp.kron(sp.csr_matrix(np.ones((1, ns))), sp.eye(d))])
        ar = np.repeat(uset.alphas, d)[:, None]
        up = sp.hstack([sp.csr_matrix(-ar), sp.eye(nz)])
        dn = sp.hstack([sp.csr_matrix(ar), sp.eye(nz)])
        A = sp.vstack([E, up, dn, sp.hstack([sp.csr_matrix([[1.0]]), sp.csr_matrix((1, nz))])],
                      format="csc")
        lo = np.concatenate([g, np.full(nz, -np.inf), np.zeros(nz), [0.0]])
        hi = np.concatenate([g, np.zeros(nz), np.full(nz, np.inf), [np.inf]])
        c = np.concatenate([[uset.radius], C.ravel()])
    elif form == "compact":
        a_sum = float(uset.alphas.sum())
        rows, lo, hi = [], [], []
        # variables [lambda, t_1..t_d]
        for k in range(d):
            slope, beta = _knapsack_pieces(C[:, k], uset.alphas)
            for s_, b_ in zip(slope, beta):
                r = np.zeros(d + 1)
                r[0], r[1 + k] = -b_, 1.0
                rows.append(r)
                lo.append(s_ * g[k])
                hi.append(np.inf)
            r = np.zeros(d + 1)
            r[0] = a_sum
            rows.append(r)
            lo.append(abs(g[k]))
            hi.append(np.inf)
        r = np.zeros(d + 1)
        r[0] = 1.0
        rows.append(r)
        lo.append(0.0)
        hi.append(np.inf)
        A = sp.csc_matrix(np.array(rows))
        lo, hi = np.array(lo), np.array(hi)
        c = np.concatenate([[uset.radius], np.ones(d)])
    else:
        raise ValueError("form must be 'pairs' or 'compact'")
    res = _linprog(c, A, lo, hi)
    if res.status != 0:
        raise RuntimeError(f"dual LP failed: {res.message}")
    return float(c @ res.x)


def box_support(lo, hi, a) -> float:
    """``max a'w`` over the box ``[lo, hi]``, coordinate by coordinate."""
    a = np.asarray(a, dtype=float)
    return float(np.sum(np.maximum(a * lo, a * hi)))


def scenario_support(points, a) -> float:
    return float(np.max(np.asarray(points) @ np.asarray(a, dtype=float)))


def _region_support(spec: ControlSpec, region, phi_mean):
    """Return ``sup(r, a)`` for stacked row ``r`` with full lifted coefficient ``a``."""
    half = spec.H * spec.model.n_w
    n_f = spec.n_state_rows
    if isinstance(region, RectSet):
        if phi_mean is None:
            raise ValueError("a rectangle needs the phi_mean of the lifting")
        lo, hi = region.lifted_box(spec.saturation, phi_mean)
        return lambda r, a: box_support(lo, hi, a)
    if isinstance(region, LiftedScenarioSet):
        return lambda r, a: scenario_support(region.data, a)
    if isinstance(region, np.ndarray):
        return lambda r, a: scenario_support(region, a)
    stage_sets = _stage_sets(spec, region)

    def sup(r, a):
        uset, coords = stage_sets[r // n_f]
        dropped = np.setdiff1d(np.arange(2 * half), coords)
        if np.any(a[dropped] != 0):
            raise ValueError(f"row {r} depends on coordinates outside its stage set")
        return svc_support(uset, a[coords])
    return sup


def worst_case_violation(spec: ControlSpec, decision: PolicyDecision, x0, region, v=None,
                         t0: int = 0, phi_mean=None) -> float:
    """Largest ``sup (lhs - rhs)`` over the stacked state rows.

    ``region`` is a calibrated :class:`SvcUncertaintySet` (or ``H`` stage sets),
    a :class:`RectSet` (``phi_mean`` required) or lifted scenarios. A
    non-positive result certifies the decision is robustly feasible.
    """
    rows = StageRows(spec)
    x_free = _free_response(spec, x0, v)
    slack = rows.slack(x_free, spec.f_rhs(t0))
    sup = _region_support(spec, region, phi_mean)
    worst = -np.inf
    for r in range(rows.n_rows):
        a = rows.lifted_coef(r, decision.M)
        worst = max(worst, float(rows.b[r] @ decision.h) + sup(r, a) - slack[r])
    return worst


def _free_response(spec: ControlSpec, x0, v):
    pred = spec.prediction()
    x = pred.Abold @ np.asarray(x0, dtype=float).ravel()
    if spec.model.n_v:
        if v is None:
            raise ValueError("this model has a known-input channel; pass v")
        x = x + pred.Bv @ np.asarray(v, dtype=float).ravel()
    return x


def input_violation_exact(spec: ControlSpec, decision: PolicyDecision, phi_mean) -> float:
    """``max_j [G(h + M phi)]_j - g_j`` over the lifted box, by interval arithmetic."""
    H = spec.H
    Gs = np.kron(np.eye(H), spec.G)
    gs = np.tile(spec.g, H)
    pm = np.asarray(phi_mean, dtype=float).ravel()
    GM = Gs @ decision.M
    lo, hi = -1.0 - pm, 1.0 - pm
    sup = np.sum(np.maximum(GM * lo, GM * hi), axis=1)
    return float(np.max(Gs @ decision.h + sup - gs))


def input_violation_sampled(spec: ControlSpec, decision: PolicyDecision, phi_mean,
                            n: int = 100_000, seed: int = 0) -> float:
    """Sampled ``max [G(h + M phi)] - g`` over ``n`` uniform points of the lifted box."""
    H = spec.H
    Gs = np.kron(np.eye(H), spec.G)
    gs = np.tile(spec.g, H)
    pm = np.asarray(phi_mean, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    GM = Gs @ decision.M
    base = Gs @ decision.h - gs
    worst = -np.inf
    for start in range(0, n, 20_000):
        k = min(20_000, n - start)
        phi = rng.uniform(-1.0, 1.0, size=(k, pm.size)) - pm
        worst = max(worst, float(np.max(phi @ GM.T + base)))
    return worst
