"""Expected quadratic cost of a saturated disturbance-feedback policy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from ..scenarios import MomentEstimates
from .spec import ControlSpec, DecisionLayout

__all__ = ["ObjectiveForm", "QuadraticCost", "build_objective"]


@dataclass(frozen=True)
class ObjectiveForm:
    """``J = 1/2 z'Pz + q'z + C`` over ``z = [h; m]`` (``m`` the free entries of ``M``)."""

    P: np.ndarray
    q: np.ndarray
    C: float
    layout: DecisionLayout

    def value(self, M, h) -> float:
        z = np.concatenate([np.asarray(h, dtype=float).ravel(), self.layout.from_matrix(M)])
        return float(0.5 * z @ self.P @ z + self.q @ z + self.C)


class QuadraticCost:
    """x0-independent part of the objective, reused for every solve.

    The trace term ``Tr{W M S M'}`` equals ``vec(M)'(S kron W)vec(M)``; only the
    rows and columns of free entries are kept.
    """

    def __init__(self, spec: ControlSpec, moments: MomentEstimates):
        pm = spec.prediction()
        H, m = spec.H, spec.model
        k = H * m.n_w
        for name in ("S_phiphi", "S_wphi", "S_ww"):
            if getattr(moments, name).shape != (k, k):
                raise ValueError(f"{name} must be {k}x{k} for H={H}, n_w={m.n_w}")
        self.layout = DecisionLayout(H, m.n_u, m.n_w)
        self.pred = pm
        Qbar = block_diag(*([spec.Q] * (H - 1) + [spec.Q_f]))
        Rbar = block_diag(*([spec.R] * H))
        Bu, Bw = pm.Bu, pm.Bw
        W = Rbar + Bu.T @ Qbar @ Bu
        W = 0.5 * (W + W.T)
        r, c = self.layout.m_index()
        S = moments.S_phiphi
        P_m = 2.0 * S[np.ix_(c, c)] * W[np.ix_(r, r)]
        G = Bu.T @ Qbar @ Bw @ moments.S_wphi
        nh = self.layout.n_h
        n = nh + self.layout.n_m
        P = np.zeros((n, n))
        P[:nh, :nh] = 2.0 * W
        P[nh:, nh:] = P_m
        self.P = 0.5 * (P + P.T)
        self.q_m = 2.0 * G[r, c]
        self._qh_x = 2.0 * Bu.T @ Qbar
        self._Qbar = Qbar
        self._c_w = float(np.trace(Bw.T @ Qbar @ Bw @ moments.S_ww))
        self.moments = moments

    def free_response(self, x0, v=None) -> np.ndarray:
        x = self.pred.Abold @ np.asarray(x0, dtype=float).ravel()
        if self.pred.Bv.shape[1]:
            if v is None:
                raise ValueError("this model has a known-input channel; pass v")
            x = x + self.pred.Bv @ np.asarray(v, dtype=float).ravel()
        return x

    def linear(self, x_free) -> tuple[np.ndarray, float]:
        q = np.concatenate([self._qh_x @ x_free, self.q_m])
        C = float(x_free @ self._Qbar @ x_free) + self._c_w
        return q, C


def build_objective(spec: ControlSpec, x0, moments: MomentEstimates | None = None,
                    v=None) -> ObjectiveForm:
    """Closed-form expected cost over stages ``1..H`` as a quadratic in ``(M, h)``.

    The ``x_0' Q x_0`` term is a constant of the problem and is omitted.
    ``v`` is the stacked forecast of the known input over stages ``0..H-1``.
    """
    moments = moments if moments is not None else spec.moments
    if moments is None:
        raise ValueError("moment estimates are required")
    cost = QuadraticCost(spec, moments)
    q, C = cost.linear(cost.free_response(x0, v))
    return ObjectiveForm(cost.P, q, C, cost.layout)
