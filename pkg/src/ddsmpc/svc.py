"""Support vector clustering with the weighted generalized intersection kernel (WGIK).

The learned set is the polytope ``{w : f(w) <= radius}`` with
``f(w) = sum_i alpha_i ||Q (w - w_i)||_1`` summed over support vectors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .qp import QuadraticProgram, SolverSettings, check_kkt, solve_qp

__all__ = [
    "WgikKernel",
    "SvcModel",
    "SvcUncertaintySet",
    "PolytopeData",
    "DegenerateSvcError",
    "fit_wgik",
    "train_svc",
    "compute_theta",
    "eval_f",
    "polytope_data",
    "svc_dual_problem",
    "SVCUncertaintySet",
]

MEMBERSHIP_RTOL = 1e-9


class DegenerateSvcError(ValueError):
    """The trained model has no boundary support vector, so theta is undefined."""


@dataclass(frozen=True)
class WgikKernel:
    """``K(w, v) = L - ||Q (w - v)||_1``."""

    Q: np.ndarray
    L: float

    def distances(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y)
        return cdist(X @ self.Q.T, Y @ self.Q.T, "cityblock")

    def gram(self, X, Y=None) -> np.ndarray:
        return self.L - self.distances(X, X if Y is None else Y)

    def with_offset(self, L: float) -> "WgikKernel":
        return replace(self, L=float(L))


def fit_wgik(train, lambda_reg: float | None = None) -> WgikKernel:
    """Sphering matrix ``(Sigma + lambda_reg I)^(-1/2)`` and offset ``L``.

    ``lambda_reg`` defaults to ``1e-8 * trace(Sigma) / d``; it also floors the
    eigenvalues before the inverse square root.
    """
    X = check_array(train, ensure_min_samples=2)
    d = X.shape[1]
    S = np.atleast_2d(np.cov(X, rowvar=False))
    tr = float(np.trace(S))
    if lambda_reg is None:
        if tr <= 0:
            raise ValueError("training data has zero variance in every coordinate")
        lambda_reg = 1e-8 * tr / d
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be non-negative")
    ev, V = np.linalg.eigh(0.5 * (S + S.T))
    ev = np.maximum(ev + lambda_reg, lambda_reg)
    if np.any(ev <= 0):
        raise ValueError("covariance is singular; pass lambda_reg > 0")
    Q = (V / np.sqrt(ev)) @ V.T
    Q = 0.5 * (Q + Q.T)
    Xs = X @ Q.T
    L = 1.0 + float(cdist(Xs, Xs, "cityblock").max())
    return WgikKernel(Q, L)


@dataclass(frozen=True)
class SvcModel:
    """A solved SVC dual with the point classification of its multipliers."""

    alphas: np.ndarray
    points: np.ndarray
    kernel: WgikKernel
    nu: float
    tau: float
    sv_indices: np.ndarray
    bsv_indices: np.ndarray
    outlier_indices: np.ndarray
    theta: float
    equality_multiplier: float = 0.0
    kkt_residual: float = field(default=np.nan, compare=False)

    @property
    def upper(self) -> float:
        return 1.0 / (self.points.shape[0] * self.nu)

    @property
    def interior_indices(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.points.shape[0]), self.sv_indices)


def svc_dual_problem(points, kernel: WgikKernel, nu: float) -> QuadraticProgram:
    """The dual QP as posed: ``min a'Ka - diag(K)'a`` on the capped simplex."""
    N = points.shape[0]
    K = kernel.gram(points)
    A = np.vstack([np.eye(N), np.ones((1, N))])
    lo = np.concatenate([np.zeros(N), [1.0]])
    hi = np.concatenate([np.full(N, 1.0 / (N * nu)), [1.0]])
    return QuadraticProgram(2.0 * K, -np.diag(K).copy(), A, lo, hi)


def _projected_dual(D, C):
    # On sum(a) = 1 the dual objective equals -a'Da plus a constant; writing
    # a = Pi a + 1/N gives a Hessian -2 Pi D Pi, PSD because the l1 distance is
    # of negative type. The raw Gram matrix L - D is generally indefinite.
    N = D.shape[0]
    Dc = D - D.mean(axis=0, keepdims=True)
    PDP = Dc - Dc.mean(axis=1, keepdims=True)
    P = -(PDP + PDP.T)
    rs = D.sum(axis=1)
    q = -(2.0 / N) * (rs - rs.mean())
    A = np.vstack([np.eye(N), np.ones((1, N))])
    lo = np.concatenate([np.zeros(N), [1.0]])
    hi = np.concatenate([np.full(N, C), [1.0]])
    return QuadraticProgram(P, q, A, lo, hi)


def _fvals(alphas, kernel, sv_points, X):
    return kernel.distances(X, sv_points) @ alphas


def train_svc(train, nu: float, kernel: WgikKernel | None = None,
              settings: SolverSettings | None = None, require_boundary: bool = True) -> SvcModel:
    """Solve the SVC dual and classify points.

    Parameters
    ----------
    train : (N, d) array
    nu : float
        Regularization in ``(0, 1)`` with ``N * nu > 1``.
    kernel : WgikKernel, optional
        Fitted on ``train`` when omitted.
    require_boundary : bool
        Raise :class:`DegenerateSvcError` when no multiplier is strictly
        inside its bounds. When False, theta falls back to the equality
        multiplier of the dual (the feature-space radius).
    settings : SolverSettings, optional
        Defaults to the polished splitting method, whose vertex solutions make
        the bound classification of the multipliers exact.
    """
    X = check_array(train, ensure_min_samples=2)
    N = X.shape[0]
    if not 0.0 < nu < 1.0:
        raise ValueError("nu must lie in (0, 1)")
    if N * nu <= 1.0:
        raise ValueError(f"N * nu = {N * nu:g} must exceed 1; increase N or nu")
    if kernel is None:
        kernel = fit_wgik(X)
    C = 1.0 / (N * nu)
    D = kernel.distances(X, X)
    sol = solve_qp(_projected_dual(D, C), settings or SolverSettings(method="admm"))
    if not sol.optimal:
        raise RuntimeError(f"SVC dual solve failed with status {sol.status.value}")
    a = np.clip(sol.z, 0.0, C)
    a /= a.sum()

    tau = 1e-6 / (N * nu)
    sv = np.flatnonzero(a > tau)
    out = np.flatnonzero(a >= C - tau)
    bsv = np.setdiff1d(sv, out)

    f_all = D[:, sv] @ a[sv]
    # stationarity of the literal dual: L - 2 f_i + y = 0 on boundary points
    y = float(2.0 * f_all[bsv].mean() - kernel.L) if bsv.size else np.nan
    report = check_kkt(svc_dual_problem(X, kernel, nu), a)

    if bsv.size:
        theta = float(f_all[bsv].mean())
    else:
        if require_boundary:
            raise DegenerateSvcError(
                "no boundary support vector found; adjust nu or N so that N*nu is not an integer"
            )
        lo = f_all[a <= tau].max(initial=0.0)
        hi = f_all[out].min(initial=np.inf)
        theta = float(lo if not np.isfinite(hi) else 0.5 * (lo + hi))
        y = 2.0 * theta - kernel.L
    if theta <= 0:
        raise DegenerateSvcError("theta is zero; the set has a single support vector")
    return SvcModel(a, X, kernel, float(nu), tau, sv, bsv, out, theta, y, report.max_residual)


def compute_theta(model: SvcModel) -> float:
    """Mean of ``f`` over the boundary support vectors."""
    if model.bsv_indices.size == 0:
        raise DegenerateSvcError("no boundary support vector")
    sv = model.sv_indices
    f = _fvals(model.alphas[sv], model.kernel, model.points[sv], model.points[model.bsv_indices])
    theta = float(f.mean())
    if theta <= 0:
        raise DegenerateSvcError("theta is zero; the set has a single support vector")
    return theta


@dataclass(frozen=True)
class PolytopeData:
    weights: np.ndarray
    points: np.ndarray
    Q: np.ndarray
    radius: float


@dataclass(frozen=True)
class SvcUncertaintySet:
    """``{w : sum_i alphas_i ||Q (w - sv_points_i)||_1 <= radius}``.

    ``phi_mean`` records the saturation mean used to lift the data the set was
    trained on, so online lifting can reuse it.
    """

    alphas: np.ndarray
    sv_points: np.ndarray
    Q: np.ndarray
    radius: float
    phi_mean: np.ndarray | None = None
    calibrated: bool = False

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float).ravel()
        P = np.atleast_2d(np.asarray(self.sv_points, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if P.shape[0] != a.size:
            raise ValueError("one alpha per support vector required")
        if Q.shape != (P.shape[1], P.shape[1]):
            raise ValueError(f"Q must be {P.shape[1]}x{P.shape[1]}")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError("radius must be finite and non-negative")
        for name, v in (("alphas", a), ("sv_points", P), ("Q", Q)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if self.phi_mean is not None:
            pm = np.asarray(self.phi_mean, dtype=float).ravel()
            pm.setflags(write=False)
            object.__setattr__(self, "phi_mean", pm)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self) -> int:
        return self.sv_points.shape[1]

    @property
    def n_sv(self) -> int:
        return self.alphas.size

    def f(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.d:
            raise ValueError(f"points have dimension {X.shape[1]}, set has {self.d}")
        out = cdist(X @ self.Q.T, self.sv_points @ self.Q.T, "cityblock") @ self.alphas
        return out[0] if single else out

    def contains(self, X, rtol: float = MEMBERSHIP_RTOL) -> np.ndarray:
        return self.f(X) <= self.radius * (1.0 + rtol)

    def with_radius(self, radius: float, calibrated: bool = True) -> "SvcUncertaintySet":
        return replace(self, radius=float(radius), calibrated=calibrated)

    def to_dict(self) -> dict:
        d = {
            "alphas": self.alphas.tolist(),
            "sv_points": self.sv_points.tolist(),
            "Q": self.Q.tolist(),
            "radius": self.radius,
            "phi_mean": None if self.phi_mean is None else self.phi_mean.tolist(),
        }
        d["calibrated"] = self.calibrated
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SvcUncertaintySet":
        return cls(d["alphas"], d["sv_points"], d["Q"], d["radius"], d.get("phi_mean"),
                   bool(d.get("calibrated", False)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "SvcUncertaintySet":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_model(cls, model: SvcModel, phi_mean=None) -> "SvcUncertaintySet":
        sv = model.sv_indices
        return cls(model.alphas[sv], model.points[sv], model.kernel.Q, model.theta, phi_mean)


def eval_f(uset: SvcUncertaintySet, w) -> np.ndarray:
    return uset.f(w)


def polytope_data(uset: SvcUncertaintySet) -> PolytopeData:
    return PolytopeData(uset.alphas.copy(), uset.sv_points.copy(), uset.Q.copy(), uset.radius)


class SVCUncertaintySet(BaseEstimator):
    """Estimator wrapper learning an :class:`SvcUncertaintySet` from samples.

    Parameters
    ----------
    nu : float, default=0.05
        Upper bound on the fraction of training outliers.
    lambda_reg : float or None
        Covariance regularization for the sphering matrix.
    require_boundary : bool, default=True
        See :func:`train_svc`.

    Attributes
    ----------
    kernel_ : WgikKernel
    model_ : SvcModel
    set_ : SvcUncertaintySet
        The trained set; replaced by the calibrated set after :meth:`calibrate`.
    theta_ : float
        Training radius.
    """

    def __init__(self, nu=0.05, lambda_reg=None, require_boundary=True):
        self.nu = nu
        self.lambda_reg = lambda_reg
        self.require_boundary = require_boundary

    def fit(self, X, y=None, phi_mean=None):
        X = check_array(X, ensure_min_samples=2)
        self.kernel_ = fit_wgik(X, self.lambda_reg)
        self.model_ = train_svc(X, self.nu, self.kernel_, require_boundary=self.require_boundary)
        self.theta_ = self.model_.theta
        self.set_ = SvcUncertaintySet.from_model(self.model_, phi_mean)
        self.n_features_in_ = X.shape[1]
        return self

    def calibrate(self, X, guarantee=None):
        """Resize to the maximum ``f`` over independent samples ``X``."""
        from .calibration import calibrate

        check_is_fitted(self, "set_")
        res = calibrate(self.set_, check_array(X), guarantee)
        self.calibration_ = res
        self.set_ = res.uncertainty_set
        return self

    def score_samples(self, X):
        """Negated ``f``: larger means deeper inside the set."""
        check_is_fitted(self, "set_")
        return -self.set_.f(check_array(X))

    def decision_function(self, X):
        return self.set_.radius + self.score_samples(X)

    def predict(self, X):
        check_is_fitted(self, "set_")
        return np.where(self.set_.contains(check_array(X)), 1, -1)
