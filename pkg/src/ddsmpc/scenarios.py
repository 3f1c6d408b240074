"""Disturbance scenarios: generation, CSV ingestion, splitting, lifting and moments.

A scenario is one disturbance trajectory stacked as ``[w_0', w_1', ..., w_{H-1}']``
so that column ``t*n_w + k`` holds component ``k`` of ``w_t``.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

__all__ = [
    "ScenarioSet",
    "SaturationKind",
    "LiftedScenarioSet",
    "MomentEstimates",
    "Ar1Params",
    "generate_ar1",
    "ar1_series",
    "load_csv",
    "save_csv",
    "split",
    "saturate",
    "lift",
    "SaturatedLifting",
    "estimate_moments",
    "sliding_windows",
]


@dataclass(frozen=True)
class ScenarioSet:
    data: np.ndarray
    H: int
    n_w: int

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if data.shape[0] < 1:
            raise ValueError("a scenario set needs at least one scenario")
        if data.shape[1] != self.H * self.n_w:
            raise ValueError(
                f"scenarios have {data.shape[1]} columns, expected H*n_w = {self.H * self.n_w}"
            )
        if not np.all(np.isfinite(data)):
            row = int(np.flatnonzero(~np.all(np.isfinite(data), axis=1))[0])
            raise ValueError(f"scenario {row} contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def N(self) -> int:
        return self.data.shape[0]

    def subset(self, idx) -> "ScenarioSet":
        return ScenarioSet(self.data[np.asarray(idx)], self.H, self.n_w)


class SaturationKind(str, enum.Enum):
    TANH = "tanh"
    CLAMP = "clamp"


def saturate(kind, r):
    """Elementwise bounded saturation: ``tanh(r)`` or ``min(1, max(-1, r))``."""
    kind = SaturationKind(kind)
    r = np.asarray(r, dtype=float)
    if kind is SaturationKind.TANH:
        return np.tanh(r)
    return np.clip(r, -1.0, 1.0)


@dataclass(frozen=True)
class LiftedScenarioSet:
    """Rows ``[phi(w) - phi_mean, w]`` of a scenario set."""

    data: np.ndarray
    phi_mean: np.ndarray
    H: int
    n_w: int
    kind: SaturationKind = SaturationKind.TANH

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def half(self) -> int:
        return self.H * self.n_w

    @property
    def phi(self) -> np.ndarray:
        return self.data[:, : self.half]

    @property
    def w(self) -> np.ndarray:
        return self.data[:, self.half:]

    def scenarios(self) -> ScenarioSet:
        return ScenarioSet(self.w, self.H, self.n_w)


def lift(scenarios: ScenarioSet, kind=SaturationKind.TANH, phi_mean=None) -> LiftedScenarioSet:
    """Lift scenarios to ``[phi_c(w); w]``.

    ``phi_mean`` defaults to the mean of ``phi(w)`` over ``scenarios``; online
    data must be lifted with the mean frozen from training.
    """
    kind = SaturationKind(kind)
    W = scenarios.data
    phi = saturate(kind, W)
    if phi_mean is None:
        phi_mean = phi.mean(axis=0)
    phi_mean = np.asarray(phi_mean, dtype=float).ravel()
    if phi_mean.size != W.shape[1]:
        raise ValueError(f"phi_mean has size {phi_mean.size}, expected {W.shape[1]}")
    return LiftedScenarioSet(np.hstack([phi - phi_mean, W]), phi_mean, scenarios.H,
                             scenarios.n_w, kind)


class SaturatedLifting(TransformerMixin, BaseEstimator):
    """Transformer form of :func:`lift` with the saturation mean learned in ``fit``."""

    def __init__(self, saturation="tanh"):
        self.saturation = saturation

    def fit(self, X, y=None):
        X = check_array(X)
        self.phi_mean_ = saturate(self.saturation, X).mean(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "phi_mean_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.hstack([saturate(self.saturation, X) - self.phi_mean_, X])


@dataclass(frozen=True)
class MomentEstimates:
    """Sample second moments of lifted disturbances.

    ``S_phiphi ~ E{phi_c phi_c'}``, ``S_wphi ~ E{w phi_c'}``, ``S_ww ~ E{w w'}``.
    ``phi_mean`` is the centring used for ``phi_c``; controllers sharing these
    moments lift their own data with it.
    """

    S_phiphi: np.ndarray
    S_wphi: np.ndarray
    S_ww: np.ndarray
    n_samples: int
    phi_mean: np.ndarray | None = None


def estimate_moments(lifted: LiftedScenarioSet) -> MomentEstimates:
    if lifted.N < 2:
        raise ValueError("moment estimation needs at least 2 scenarios")
    phi, w = lifted.phi, lifted.w
    N = lifted.N
    S_pp = phi.T @ phi / N
    S_ww = w.T @ w / N
    S_wp = w.T @ phi / N
    return MomentEstimates(0.5 * (S_pp + S_pp.T), S_wp, 0.5 * (S_ww + S_ww.T), N,
                           lifted.phi_mean.copy())


@dataclass(frozen=True)
class Ar1Params:
    """Per-coordinate AR(1): ``w_t = rho w_{t-1} + e_t`` started from stationarity."""

    rho: float = 0.6
    stationary_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be < 1")
        if not self.stationary_std > 0:
            raise ValueError("stationary_std must be > 0")


def _ar1_paths(rng, rho, std, N, H, n_w):
    e = rng.standard_normal((N, H, n_w))
    w = np.empty((N, H, n_w))
    w[:, 0] = std * e[:, 0]
    innov = std * np.sqrt(1.0 - rho**2)
    for t in range(1, H):
        w[:, t] = rho * w[:, t - 1] + innov * e[:, t]
    return w.reshape(N, H * n_w)


def generate_ar1(params: Ar1Params, N: int, H: int, n_w: int = 1) -> ScenarioSet:
    """``N`` independent AR(1) trajectories of length ``H``; deterministic per seed."""
    rng = np.random.default_rng(params.seed)
    return ScenarioSet(_ar1_paths(rng, params.rho, params.stationary_std, N, H, n_w), H, n_w)


def ar1_series(params: Ar1Params, T: int, n_w: int = 1) -> np.ndarray:
    """One continuous ``(T, n_w)`` AR(1) path, e.g. the realized disturbance of a closed loop."""
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = np.random.default_rng(params.seed)
    return _ar1_paths(rng, params.rho, params.stationary_std, 1, T, n_w).reshape(T, n_w)


def sliding_windows(series, H: int) -> np.ndarray:
    """Overlapping length-``H`` windows (stride 1) of a ``(T, n_w)`` or ``(T,)`` series."""
    s = np.asarray(series, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    T = s.shape[0]
    if T < H:
        raise ValueError(f"series of length {T} is shorter than the horizon {H}")
    idx = np.arange(H)[None, :] + np.arange(T - H + 1)[:, None]
    return s[idx].reshape(T - H + 1, H * s.shape[1])


def load_csv(path, H: int | None = None, n_w: int = 1) -> ScenarioSet:
    """Read one scenario per row; a non-numeric first row is treated as a header.

    ``H`` defaults to ``columns / n_w``.
    """
    rows = []
    with open(Path(path), newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                rows.append([float(f) for f in rec])
            except ValueError:
                if lineno == 1:
                    continue
                raise ValueError(f"{path}: row {lineno} is not numeric") from None
    if not rows:
        raise ValueError(f"{path}: no scenarios found")
    width = len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {i + 1} has {len(r)} fields, expected {width}")
    if H is None:
        if width % n_w:
            raise ValueError(f"{path}: {width} columns is not a multiple of n_w={n_w}")
        H = width // n_w
    if width != H * n_w:
        raise ValueError(f"{path}: rows have {width} fields, expected H*n_w = {H * n_w}")
    return ScenarioSet(np.array(rows), H, n_w)


def save_csv(scenarios: ScenarioSet, path) -> None:
    header = [f"w{t}_{k + 1}" for t in range(scenarios.H) for k in range(scenarios.n_w)]
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in scenarios.data:
            wr.writerow([repr(float(v)) for v in row])


def split(scenarios: ScenarioSet, n_train: int, n_calib: int, seed: int = 0):
    """Random disjoint ``(train, calib)`` partition drawn without replacement."""
    need = n_train + n_calib
    if n_train < 0 or n_calib < 0:
        raise ValueError("split sizes must be non-negative")
    if need > scenarios.N:
        raise ValueError(f"split needs {need} scenarios, only {scenarios.N} available")
    perm = np.random.default_rng(seed).permutation(scenarios.N)
    return scenarios.subset(perm[:n_train]), scenarios.subset(perm[n_train:need])
