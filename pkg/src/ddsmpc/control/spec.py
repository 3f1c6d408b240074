"""Problem data shared by every controller."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..calibration import GuaranteeParams
from ..lti import LtiModel, PredictionMatrices, build_prediction_matrices
from ..qp import solve_lp
from ..scenarios import MomentEstimates, SaturationKind

__all__ = [
    "ControllerKind",
    "ControlSpec",
    "PolicyDecision",
    "RectSet",
    "DecisionLayout",
]


class ControllerKind(str, enum.Enum):
    DRMPC = "DRMPC"
    SSMPC = "SSMPC"
    RMPC = "RMPC"
    BACKUP = "BACKUP"


def _psd(M, name, strict=False):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    ev = np.linalg.eigvalsh(0.5 * (M + M.T))
    tol = 1e-10 * max(1.0, np.abs(ev).max())
    if (strict and ev.min() <= tol) or ev.min() < -tol:
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")
    return M


@dataclass(frozen=True)
class ControlSpec:
    """Finite-horizon problem data.

    State constraints are ``F x_t <= f`` with a fixed ``F``. ``f_profile``
    optionally makes the right-hand side periodic in wall-clock time: the row
    for absolute step ``k`` is ``f_profile[k % len(f_profile)]``. Inputs obey
    ``G u_t <= g`` at every stage.
    """

    model: LtiModel
    H: int
    Q: np.ndarray
    R: np.ndarray
    Q_f: np.ndarray
    F: np.ndarray
    f: np.ndarray
    G: np.ndarray
    g: np.ndarray
    saturation: SaturationKind = SaturationKind.TANH
    guarantee: GuaranteeParams = field(default_factory=GuaranteeParams)
    f_profile: np.ndarray | None = None
    moments: MomentEstimates | None = None

    def __post_init__(self):
        m = self.model
        if self.H < 1:
            raise ValueError("H must be >= 1")
        Q = _psd(self.Q, "Q")
        Q_f = _psd(self.Q_f, "Q_f")
        R = _psd(self.R, "R", strict=True)
        if Q.shape != (m.n_x, m.n_x) or Q_f.shape != (m.n_x, m.n_x):
            raise ValueError("Q and Q_f must be n_x x n_x")
        if R.shape != (m.n_u, m.n_u):
            raise ValueError("R must be n_u x n_u")
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        f = np.asarray(self.f, dtype=float).ravel()
        if F.shape[1] != m.n_x or F.shape[0] != f.size:
            raise ValueError("F must be m x n_x with f of length m")
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        g = np.asarray(self.g, dtype=float).ravel()
        if G.shape[1] != m.n_u or G.shape[0] != g.size:
            raise ValueError("G must be p x n_u with g of length p")
        for k in range(m.n_u):
            for sgn in (1.0, -1.0):
                c = np.zeros(m.n_u)
                c[k] = -sgn
                sol = solve_lp(c, G, np.full(g.size, -np.inf), g)
                if not sol.optimal:
                    raise ValueError("input polytope G u <= g must be nonempty and bounded")
        prof = None
        if self.f_profile is not None:
            prof = np.atleast_2d(np.asarray(self.f_profile, dtype=float))
            if prof.shape[1] != f.size:
                raise ValueError("f_profile rows must match the length of f")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "Q_f", Q_f)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "f_profile", prof)
        object.__setattr__(self, "saturation", SaturationKind(self.saturation))

    @property
    def n_state_rows(self) -> int:
        return self.F.shape[0]

    @property
    def n_lifted(self) -> int:
        return 2 * self.H * self.model.n_w

    def prediction(self) -> PredictionMatrices:
        return build_prediction_matrices(self.model, self.H)

    def f_rhs(self, t0: int = 0) -> np.ndarray:
        """Right-hand sides for stages ``1..H`` of a problem solved at wall-clock ``t0``."""
        if self.f_profile is None:
            return np.tile(self.f, (self.H, 1))
        P = self.f_profile.shape[0]
        return self.f_profile[(t0 + np.arange(1, self.H + 1)) % P]

    def f_at(self, t: int) -> np.ndarray:
        """Right-hand side at absolute step ``t``."""
        if self.f_profile is None:
            return self.f
        return self.f_profile[t % self.f_profile.shape[0]]

    def penalty_weight(self) -> float:
        return 1e4 * max(np.linalg.norm(self.Q, 2), np.linalg.norm(self.R, 2))


@dataclass(frozen=True)
class DecisionLayout:
    """Free entries of the strictly lower block-triangular gain ``M``."""

    H: int
    n_u: int
    n_w: int

    @property
    def n_h(self) -> int:
        return self.H * self.n_u

    @property
    def n_m(self) -> int:
        return self.n_u * self.n_w * self.H * (self.H - 1) // 2

    def m_index(self) -> np.ndarray:
        """``(row, col)`` of each free entry of ``M``, block-row major."""
        rows, cols = [], []
        for t in range(1, self.H):
            for i in range(self.n_u):
                for j in range(t * self.n_w):
                    rows.append(t * self.n_u + i)
                    cols.append(j)
        return np.array(rows, dtype=int), np.array(cols, dtype=int)

    def to_matrix(self, m) -> np.ndarray:
        M = np.zeros((self.H * self.n_u, self.H * self.n_w))
        r, c = self.m_index()
        M[r, c] = m
        return M

    def from_matrix(self, M) -> np.ndarray:
        r, c = self.m_index()
        return np.asarray(M)[r, c]


@dataclass(frozen=True)
class PolicyDecision:
    """Saturated disturbance-feedback policy ``u = h + M phi_c(w)``."""

    M: np.ndarray
    h: np.ndarray
    n_u: int
    n_w: int

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        H = h.size // self.n_u
        if M.shape != (H * self.n_u, H * self.n_w):
            raise ValueError("M shape does not match h and the dimensions")
        for t in range(H):
            blk = M[t * self.n_u:(t + 1) * self.n_u, t * self.n_w:]
            if np.any(blk != 0):
                raise ValueError("M must be strictly lower block-triangular")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "h", h)

    @property
    def H(self) -> int:
        return self.h.size // self.n_u

    @property
    def first_input(self) -> np.ndarray:
        return self.h[: self.n_u].copy()

    def inputs(self, phi_c) -> np.ndarray:
        return self.h + self.M @ np.asarray(phi_c, dtype=float)

    def to_dict(self) -> dict:
        return {"M": self.M.tolist(), "h": self.h.tolist()}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, d: dict, n_u: int, n_w: int) -> "PolicyDecision":
        return cls(d["M"], d["h"], n_u, n_w)


@dataclass(frozen=True)
class RectSet:
    gamma_min: np.ndarray
    gamma_max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.gamma_min, dtype=float).ravel()
        hi = np.asarray(self.gamma_max, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("need gamma_min <= gamma_max elementwise")
        object.__setattr__(self, "gamma_min", lo)
        object.__setattr__(self, "gamma_max", hi)

    def contains(self, W) -> np.ndarray:
        W = np.atleast_2d(W)
        return np.all((W >= self.gamma_min) & (W <= self.gamma_max), axis=1)

    def lifted_box(self, kind, phi_mean) -> tuple[np.ndarray, np.ndarray]:
        """Box over ``[phi_c; w]`` implied by the rectangle (saturations are monotone)."""
        from ..scenarios import saturate

        pm = np.asarray(phi_mean, dtype=float).ravel()
        lo = np.concatenate([saturate(kind, self.gamma_min) - pm, self.gamma_min])
        hi = np.concatenate([saturate(kind, self.gamma_max) - pm, self.gamma_max])
        return lo, hi

    def to_dict(self) -> dict:
        return {"gamma_min": self.gamma_min.tolist(), "gamma_max": self.gamma_max.tolist()}
