"""Linear time-invariant plant and its stacked horizon form."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "LtiModel",
    "PredictionMatrices",
    "build_prediction_matrices",
    "simulate_step",
    "load_model_json",
]


def _mat(M, rows, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        M = M.reshape(rows, 0)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    return M


@dataclass(frozen=True)
class LtiModel:
    """``x+ = A x + B_u u + B_w w + B_v v``.

    ``B_v`` is the known-input channel; it has zero columns when absent.
    """

    A: np.ndarray
    B_u: np.ndarray
    B_w: np.ndarray
    B_v: np.ndarray | None = None

    def __post_init__(self):
        A = _mat(self.A, 0, "A")
        n_x = A.shape[0]
        if A.shape != (n_x, n_x) or n_x < 1:
            raise ValueError(f"A must be square and non-empty, got {A.shape}")
        B_u = _mat(self.B_u, n_x, "B_u")
        B_w = _mat(self.B_w, n_x, "B_w")
        B_v = np.zeros((n_x, 0)) if self.B_v is None else _mat(self.B_v, n_x, "B_v")
        for name, B in (("B_u", B_u), ("B_w", B_w), ("B_v", B_v)):
            if B.shape[0] != n_x:
                raise ValueError(f"{name} has {B.shape[0]} rows, A has {n_x}")
        if B_u.shape[1] < 1 or B_w.shape[1] < 1:
            raise ValueError("n_u and n_w must be at least 1")
        for name, M in (("A", A), ("B_u", B_u), ("B_w", B_w), ("B_v", B_v)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B_u.shape[1]

    @property
    def n_w(self) -> int:
        return self.B_w.shape[1]

    @property
    def n_v(self) -> int:
        return self.B_v.shape[1]

    def to_dict(self) -> dict:
        d = {"A": self.A.tolist(), "B_u": self.B_u.tolist(), "B_w": self.B_w.tolist()}
        if self.n_v:
            d["B_v"] = self.B_v.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LtiModel":
        return cls(d["A"], d["B_u"], d["B_w"], d.get("B_v"))


def load_model_json(path) -> LtiModel:
    """Read a model from JSON with keys ``A``, ``B_u``, ``B_w`` and optional ``B_v``."""
    with open(Path(path)) as fh:
        return LtiModel.from_dict(json.load(fh))


@dataclass(frozen=True)
class PredictionMatrices:
    """Stacked predictions ``x = Abold x0 + Bu u + Bw w + Bv v`` over ``x_1..x_H``."""

    Abold: np.ndarray
    Bu: np.ndarray
    Bw: np.ndarray
    Bv: np.ndarray
    H: int
    n_x: int

    def stage_rows(self, t: int) -> slice:
        """Rows of the stacked state belonging to ``x_t`` (``1 <= t <= H``)."""
        return slice((t - 1) * self.n_x, t * self.n_x)

    def predict(self, x0, u, w, v=None) -> np.ndarray:
        x = self.Abold @ x0 + self.Bu @ u + self.Bw @ w
        if self.Bv.shape[1]:
            x = x + self.Bv @ v
        return x


def _toeplitz_blocks(powers, B, H):
    n_x, k = B.shape
    out = np.zeros((H * n_x, H * k))
    for t in range(H):
        for j in range(t + 1):
            out[t * n_x:(t + 1) * n_x, j * k:(j + 1) * k] = powers[t - j] @ B
    return out


def build_prediction_matrices(model: LtiModel, H: int) -> PredictionMatrices:
    if H < 1:
        raise ValueError("horizon H must be >= 1")
    n_x = model.n_x
    powers = [np.eye(n_x)]
    for _ in range(H):
        powers.append(powers[-1] @ model.A)
    Abold = np.vstack(powers[1:])
    return PredictionMatrices(
        Abold=Abold,
        Bu=_toeplitz_blocks(powers, model.B_u, H),
        Bw=_toeplitz_blocks(powers, model.B_w, H),
        Bv=_toeplitz_blocks(powers, model.B_v, H),
        H=H,
        n_x=n_x,
    )


def simulate_step(model: LtiModel, x, u, w, v=None) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    v = np.zeros(model.n_v) if v is None else np.asarray(v, dtype=float).ravel()
    for name, vec, size in (("x", x, model.n_x), ("u", u, model.n_u), ("w", w, model.n_w),
                            ("v", v, model.n_v)):
        if vec.size != size:
            raise ValueError(f"{name} has size {vec.size}, expected {size}")
    out = model.A @ x + model.B_u @ u + model.B_w @ w
    if model.n_v:
        out = out + model.B_v @ v
    return out
