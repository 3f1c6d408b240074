"""Receding-horizon closed loop with a backup fallback, and its metrics."""
from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control.spec import ControlSpec, ControllerKind, PolicyDecision
from .lti import LtiModel, simulate_step
from .scenarios import Ar1Params, ar1_series

__all__ = [
    "RhcConfig",
    "RhcTrace",
    "Metrics",
    "MeanSquareVerdict",
    "run_rhc",
    "compute_metrics",
    "mean_square_bound_check",
    "replay",
]


@dataclass
class RhcConfig:
    """One closed-loop run.

    Parameters
    ----------
    controller : fitted DRMPC, SSMPC or RMPC
        Its offline artifacts (set, scenarios or rectangle) must already be built.
    T : int
        Number of closed-loop steps.
    x0 : array
    disturbance : Ar1Params or array of shape (T, n_w)
        Either generator parameters or the realized sequence itself.
    forecast : array of shape (T + H - 1, n_v), optional
        Known-input stream; row ``k`` is used at step ``k`` and in the
        predictions made up to ``H - 1`` steps earlier.
    t0 : int
        Wall-clock index of the first step (selects rows of the constraint profile).
    seed : int, optional
        Replaces the seed of ``disturbance`` when it is an :class:`Ar1Params`.
    keep_policies : bool
        Store every solved policy on the trace.
    """

    controller: object
    T: int
    x0: np.ndarray
    disturbance: object
    forecast: np.ndarray | None = None
    t0: int = 0
    seed: int | None = None
    keep_policies: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        self.x0 = np.asarray(self.x0, dtype=float).ravel()

    @property
    def spec(self) -> ControlSpec:
        return self.controller.spec

    @property
    def kind(self) -> ControllerKind:
        return self.controller.kind

    def disturbances(self) -> np.ndarray:
        n_w = self.spec.model.n_w
        if isinstance(self.disturbance, Ar1Params):
            p = self.disturbance
            if self.seed is not None:
                p = Ar1Params(p.rho, p.stationary_std, self.seed)
            return ar1_series(p, self.T, n_w)
        W = np.asarray(self.disturbance, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        if W.shape[1] != n_w:
            raise ValueError(f"disturbance stream has {W.shape[1]} columns, expected {n_w}")
        return W


@dataclass
class RhcTrace:
    """Logged closed loop; ``states[t + 1]`` is the plant response to row ``t``."""

    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    known_inputs: np.ndarray
    stage_cost: np.ndarray
    fallback: np.ndarray
    solve_time: np.ndarray
    violation: np.ndarray
    decrease: np.ndarray
    status: list = field(default_factory=list)
    policies: list | None = None
    kind: str = ""
    t0: int = 0

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    def to_csv(self, path) -> None:
        n_x, n_u = self.states.shape[1], self.inputs.shape[1]
        n_w, n_v = self.disturbances.shape[1], self.known_inputs.shape[1]
        header = (["t"] + [f"x{i + 1}" for i in range(n_x)] + [f"u{i + 1}" for i in range(n_u)]
                  + [f"w{i + 1}" for i in range(n_w)] + [f"v{i + 1}" for i in range(n_v)]
                  + ["cost", "fallback", "solve_ms", "violation"])
        with open(Path(path), "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for t in range(self.T + 1):
                row = [t] + [repr(float(v)) for v in self.states[t]]
                if t < self.T:
                    row += [repr(float(v)) for v in self.inputs[t]]
                    row += [repr(float(v)) for v in self.disturbances[t]]
                    row += [repr(float(v)) for v in self.known_inputs[t]]
                    row += [repr(float(self.stage_cost[t])), int(self.fallback[t]),
                            repr(float(1e3 * self.solve_time[t])), int(self.violation[t])]
                else:
                    row += [""] * (n_u + n_w + n_v + 4)
                wr.writerow(row)

    @classmethod
    def from_csv(cls, path, kind: str = "", t0: int = 0) -> "RhcTrace":
        with open(Path(path), newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            rows = [r for r in rd if r]
        cols = {name: i for i, name in enumerate(header)}

        def block(prefix, n_rows):
            idx = [cols[h] for h in header if h[0] == prefix and h[1:].isdigit()]
            return np.array([[float(r[i]) for i in idx] for r in rows[:n_rows]]).reshape(n_rows, len(idx))

        T = len(rows) - 1
        scalar = lambda name, typ: np.array([typ(float(r[cols[name]])) for r in rows[:T]])  # noqa: E731
        return cls(
            states=block("x", T + 1),
            inputs=block("u", T),
            disturbances=block("w", T),
            known_inputs=block("v", T),
            stage_cost=scalar("cost", float),
            fallback=scalar("fallback", bool),
            solve_time=scalar("solve_ms", float) / 1e3,
            violation=scalar("violation", bool),
            decrease=np.full(T, np.nan),
            kind=kind,
            t0=t0,
        )


@dataclass(frozen=True)
class Metrics:
    avg_cost_to_go: float
    avg_solve_time: float
    violation_rate: float
    fallback_rate: float
    running_mean_sq: np.ndarray

    def to_dict(self) -> dict:
        return {
            "avg_cost_to_go": self.avg_cost_to_go,
            "avg_solve_time": self.avg_solve_time,
            "violation_rate": self.violation_rate,
            "fallback_rate": self.fallback_rate,
            "final_mean_sq": float(self.running_mean_sq[-1]),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def _forecast_window(cfg: RhcConfig, t: int, H: int, n_v: int):
    if n_v == 0:
        return None, np.zeros(0)
    if cfg.forecast is None:
        raise ValueError("this model has a known-input channel; the config needs a forecast")
    F = np.atleast_2d(np.asarray(cfg.forecast, dtype=float))
    if F.shape[0] < t + H:
        raise ValueError(f"forecast stream exhausted at step {t}: need {t + H} rows, have {F.shape[0]}")
    return F[t:t + H].ravel(), F[t]


def _violates(spec: ControlSpec, x, t_abs: int) -> bool:
    return bool(np.any(spec.F @ x > spec.f_at(t_abs)))


def run_rhc(cfg: RhcConfig) -> RhcTrace:
    """Closed loop: solve at the measured state, fall back to the softened problem
    if the controller's problem is not solved, apply the first input ``h_0``."""
    ctl, spec = cfg.controller, cfg.spec
    model = spec.model
    T, H = cfg.T, spec.H
    W = cfg.disturbances()
    if W.shape[0] < T:
        raise ValueError(f"disturbance stream exhausted at step {W.shape[0]}: {T} steps requested")
    n_x, n_u, n_v = model.n_x, model.n_u, model.n_v
    X = np.empty((T + 1, n_x))
    U = np.empty((T, n_u))
    V = np.zeros((T, n_v))
    cost = np.empty(T)
    fb = np.zeros(T, dtype=bool)
    st = np.empty(T)
    viol = np.zeros(T, dtype=bool)
    dec = np.full(T, np.nan)
    status, policies = [], [] if cfg.keep_policies else None
    X[0] = cfg.x0
    for t in range(T):
        x = X[t]
        v_stack, v_now = _forecast_window(cfg, t, H, n_v)
        t_abs = cfg.t0 + t
        tic = time.perf_counter()
        sol = ctl.solve(x, v_stack, t_abs)
        if not sol.optimal:
            fb[t] = True
            sol = ctl.solve_backup(x, v_stack, t_abs)
            if not sol.optimal:
                raise RuntimeError(f"backup problem failed at step {t} with status {sol.status}")
        st[t] = time.perf_counter() - tic
        status.append(sol.status)
        u = sol.decision.first_input
        if cfg.keep_policies:
            policies.append(sol.decision)
        U[t] = u
        V[t] = v_now
        cost[t] = float(x @ spec.Q @ x + u @ spec.R @ u)
        x_next = simulate_step(model, x, u, W[t], v_now if n_v else None)
        if fb[t]:
            drift = model.A @ x + model.B_u @ u
            dec[t] = float(np.linalg.norm(drift) - np.linalg.norm(x))
        X[t + 1] = x_next
        viol[t] = _violates(spec, x_next, t_abs + 1)
    return RhcTrace(X, U, W[:T].copy(), V, cost, fb, st, viol, dec, status, policies,
                    ctl.kind.value, cfg.t0)


def compute_metrics(trace: RhcTrace, spec: ControlSpec) -> Metrics:
    X, U = trace.states[:-1], trace.inputs
    stage = np.einsum("ti,ij,tj->t", X, spec.Q, X) + np.einsum("ti,ij,tj->t", U, spec.R, U)
    sq = np.sum(trace.states ** 2, axis=1)
    return Metrics(
        avg_cost_to_go=float(stage.mean()),
        avg_solve_time=float(np.mean(trace.solve_time)),
        violation_rate=float(np.mean(trace.violation)),
        fallback_rate=float(np.mean(trace.fallback)),
        running_mean_sq=np.cumsum(sq) / np.arange(1, sq.size + 1),
    )


@dataclass(frozen=True)
class MeanSquareVerdict:
    max_windowed_mean: float
    reference: float
    bounded: bool


def mean_square_bound_check(trace, window: int = 50) -> MeanSquareVerdict:
    """Heuristic divergence detector on ``||x_t||^2``.

    Means over consecutive windows are compared: the run is called bounded
    when no window in the second half exceeds ten times the median window
    of the first half. A heuristic, not a proof of mean-square boundedness.
    ``trace`` is an :class:`RhcTrace` or a state array.
    """
    X = trace.states if isinstance(trace, RhcTrace) else np.asarray(trace, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    sq = np.sum(X ** 2, axis=1)
    if window < 1 or sq.size < 10 * window:
        raise ValueError(f"need at least {10 * window} states for window {window}, got {sq.size}")
    n = sq.size // window
    means = sq[: n * window].reshape(n, window).mean(axis=1)
    half = n // 2
    ref = float(np.median(means[:half]))
    peak = float(np.max(means[half:]))
    bounded = bool(np.isfinite(peak) and peak <= 10.0 * max(ref, np.finfo(float).tiny))
    return MeanSquareVerdict(float(np.max(means)), ref, bounded)


def replay(trace: RhcTrace, model: LtiModel) -> np.ndarray:
    """Re-simulate from the logged inputs and disturbances."""
    X = np.empty_like(trace.states)
    X[0] = trace.states[0]
    for t in range(trace.T):
        v = trace.known_inputs[t] if model.n_v else None
        X[t + 1] = simulate_step(model, X[t], trace.inputs[t], trace.disturbances[t], v)
    return X
