"""Benchmark studies: closed-loop comparisons, guarantee Monte Carlo, the 2-D
set example and sample-size tables. Each study writes CSV/JSON under
``config.out`` and returns the aggregate rows."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..calibration import (GuaranteeParams, calibration_sample_size, df_decision_count,
                           empirical_coverage, rect_decision_count, scenario_sample_size)
from ..control import DRMPC, RMPC, SSMPC, ControllerKind, rect_fit
from ..control.validation import input_violation_sampled
from ..rhc import RhcConfig, compute_metrics, run_rhc
from ..scenarios import Ar1Params, estimate_moments, generate_ar1, lift, split
from ..svc import SVCUncertaintySet
from .plants import TWO_MASS_X0, building_spec, two_mass_spring_spec
from .weather import SyntheticClimate, ingest_weather, read_weather, synthetic_weather

__all__ = [
    "BENCHMARKS",
    "BenchmarkConfig",
    "run_benchmark",
    "run_two_mass_spring",
    "run_building",
    "run_monte_carlo",
    "run_example_2d",
    "sample_size_table",
    "write_rows",
    "read_rows",
]

log = logging.getLogger(__name__)

BENCHMARKS = ("two-mass-spring", "building", "monte-carlo", "example-2d", "sample-size")

_DEFAULTS = {
    "two-mass-spring": {"horizons": [5, 6, 7], "seeds": list(range(10))},
    "building": {"beta": 0.10, "horizons": [5], "seeds": [0]},
    "monte-carlo": {"horizons": [5], "seeds": [0]},
    "example-2d": {"seeds": [0]},
    "sample-size": {"horizons": list(range(1, 16))},
}


@dataclass
class BenchmarkConfig:
    """Settings for one study; unknown JSON keys are rejected.

    ``disturbance`` holds AR(1) parameters (``rho``, ``stationary_std``) for the
    two-mass-spring plant and the Monte Carlo study. ``scale`` multiplies the
    Monte Carlo run count and evaluation sample count.
    """

    benchmark: str
    controllers: list = field(default_factory=lambda: ["DRMPC", "SSMPC", "RMPC"])
    epsilon: float = 0.05
    beta: float = 0.05
    horizons: list = field(default_factory=lambda: [5])
    seeds: list = field(default_factory=lambda: [0])
    disturbance: dict = field(default_factory=lambda: {"rho": 0.6, "stationary_std": 0.005})
    out: str = "results"
    T: int = 100
    n_train: int = 300
    moment_samples: int = 1000
    nu: float | None = None
    input_check_samples: int = 100_000
    workers: int = 1
    # building
    days: int = 30
    history_days: int = 60
    climate: dict = field(default_factory=dict)
    weather_history: str | None = None
    weather_sim: str | None = None
    ambient_mean_c: float = 8.9
    # monte carlo
    runs: int = 500
    eval_samples: int = 5000
    train_sizes: list = field(default_factory=lambda: [100, 150, 200, 250])
    scale: float = 1.0
    # example 2-d
    n_train_2d: int = 94
    grid: int = 200

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"benchmark must be one of {BENCHMARKS}, got {self.benchmark!r}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        for c in self.controllers:
            ControllerKind(c)
        GuaranteeParams(self.epsilon, self.beta)
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @classmethod
    def for_benchmark(cls, name: str, **overrides) -> "BenchmarkConfig":
        kw = dict(_DEFAULTS.get(name, {}))
        kw.update(overrides)
        return cls(benchmark=name, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkConfig":
        d = dict(d)
        name = d.pop("benchmark", None)
        if name is None:
            raise ValueError("config needs a 'benchmark' key")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls.for_benchmark(name, **d)

    @classmethod
    def from_json(cls, path) -> "BenchmarkConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @property
    def guarantee(self) -> GuaranteeParams:
        return GuaranteeParams(self.epsilon, self.beta)

    @property
    def ar1(self) -> Ar1Params:
        return Ar1Params(rho=self.disturbance.get("rho", 0.6),
                         stationary_std=self.disturbance.get("stationary_std", 0.005))

    @property
    def out_dir(self) -> Path:
        p = Path(self.out)
        p.mkdir(parents=True, exist_ok=True)
        return p


def _streams(seed: int, k: int) -> list[int]:
    """``k`` independent integer seeds derived from ``seed``."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def write_rows(rows: list[dict], path) -> None:
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(Path(path), "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: _fmt(r.get(k, "")) for k in keys})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def read_rows(path) -> list[dict]:
    """Inverse of :func:`write_rows`: integers, floats and strings are restored."""
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {}
        for k, v in r.items():
            for typ in (int, float):
                try:
                    d[k] = typ(v)
                    break
                except (TypeError, ValueError):
                    d[k] = v
        out.append(d)
    return out


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _max_input_violation(spec, ctl, trace, n, seed) -> float:
    if not n or not trace.policies:
        return float("nan")
    return max(input_violation_sampled(spec, p, ctl.phi_mean_, n, seed + i)
               for i, p in enumerate(trace.policies))


def _cell_summary(trace, spec, ctl, cfg, cell_dir, seed, extra):
    metrics = compute_metrics(trace, spec)
    cell_dir.mkdir(parents=True, exist_ok=True)
    trace.to_csv(cell_dir / "trace.csv")
    metrics.to_json(cell_dir / "metrics.json")
    row = dict(extra)
    row.update(metrics.to_dict())
    row["max_input_violation"] = _max_input_violation(spec, ctl, trace, cfg.input_check_samples,
                                                      seed)
    row["status"] = "ok"
    return row


# ---------------------------------------------------------------------------
# two-mass-spring
# ---------------------------------------------------------------------------
def _fit_controller(kind: ControllerKind, spec, cfg: BenchmarkConfig, s_train, s_cal, s_scen,
                    draw):
    g = spec.guarantee
    if kind is ControllerKind.DRMPC:
        n_cal = calibration_sample_size(g)
        ctl = DRMPC(spec, nu=cfg.nu).fit(draw(s_train, cfg.n_train), draw(s_cal, n_cal))
        return ctl, f"{cfg.n_train}/{n_cal}"
    cls = SSMPC if kind is ControllerKind.SSMPC else RMPC
    ctl = cls(spec)
    N = ctl.required_scenarios()
    ctl.fit(draw(s_scen, N))
    return ctl, N


def _two_mass_cell(cfg: BenchmarkConfig, name: str, H: int, seed: int) -> dict:
    kind = ControllerKind(name)
    base = {"controller": name, "H": H, "seed": seed}
    try:
        ar = cfg.ar1
        s_mom, s_train, s_cal, s_scen, s_loop = _streams(seed, 5)
        spec = two_mass_spring_spec(H, cfg.guarantee)

        def draw(s, n):
            return generate_ar1(dataclasses.replace(ar, seed=s), n, H)

        moments = estimate_moments(lift(draw(s_mom, cfg.moment_samples), spec.saturation))
        spec = dataclasses.replace(spec, moments=moments)
        tic = time.perf_counter()
        ctl, complexity = _fit_controller(kind, spec, cfg, s_train, s_cal, s_scen, draw)
        fit_time = time.perf_counter() - tic
        trace = run_rhc(RhcConfig(ctl, cfg.T, TWO_MASS_X0, dataclasses.replace(ar, seed=s_loop),
                                  keep_policies=bool(cfg.input_check_samples)))
        cell = cfg.out_dir / "two-mass-spring" / f"H{H}" / name / f"seed{seed}"
        base.update(complexity=complexity, fit_time=fit_time)
        return _cell_summary(trace, spec, ctl, cfg, cell, seed, base)
    except Exception as exc:  # recorded per cell; the study continues
        log.warning("cell %s failed: %s", base, exc)
        base.update(status=f"failed: {exc}", error=traceback.format_exc(limit=2))
        return base


def _aggregate(rows, keys=("controller", "H")) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for key, rs in groups.items():
        ok = [r for r in rs if r.get("status") == "ok"]
        agg = dict(zip(keys, key))
        agg["complexity"] = ok[0]["complexity"] if ok else ""
        agg["n_ok"] = len(ok)
        agg["n_failed"] = len(rs) - len(ok)
        for m in ("avg_cost_to_go", "avg_solve_time", "violation_rate", "fallback_rate",
                  "max_input_violation"):
            vals = [r[m] for r in ok]
            if m == "max_input_violation":
                agg[m] = float(np.nanmax(vals)) if vals and not np.all(np.isnan(vals)) else np.nan
            else:
                agg[m] = float(np.mean(vals)) if vals else np.nan
        out.append(agg)
    return out


def run_two_mass_spring(cfg: BenchmarkConfig) -> list[dict]:
    """Per (controller, H, seed) closed-loop cells plus an aggregate table."""
    jobs = [(cfg, c, H, s) for H in cfg.horizons for c in cfg.controllers for s in cfg.seeds]
    rows = _map(_two_mass_cell, jobs, cfg.workers)
    root = cfg.out_dir / "two-mass-spring"
    root.mkdir(parents=True, exist_ok=True)
    write_rows(rows, root / "cells.csv")
    agg = _aggregate(rows)
    write_rows(agg, root / "aggregate.csv")
    return agg


# ---------------------------------------------------------------------------
# building
# ---------------------------------------------------------------------------
def _weather(cfg: BenchmarkConfig, seed: int):
    climate = SyntheticClimate(**cfg.climate)
    s_hist, s_sim = _streams(seed, 2)
    hist = (read_weather(cfg.weather_history) if cfg.weather_history
            else synthetic_weather(24 * cfg.history_days, climate, s_hist))
    sim = (read_weather(cfg.weather_sim) if cfg.weather_sim
           else synthetic_weather(24 * cfg.days + 24, climate, s_sim))
    return hist, sim


BUILDING_X0 = np.array([21.0, 9.0, 21.0, 21.0])


def _building_cell(cfg: BenchmarkConfig, name: str, H: int, seed: int) -> dict:
    kind = ControllerKind(name)
    base = {"controller": name, "H": H, "seed": seed}
    try:
        spec = building_spec(H, cfg.guarantee)
        hist, sim = _weather(cfg, seed)
        S = ingest_weather(hist, H)
        moments = estimate_moments(lift(S, spec.saturation))
        spec = dataclasses.replace(spec, moments=moments)
        g = spec.guarantee
        n_rect = scenario_sample_size(rect_decision_count(H, 1), g)
        if kind is ControllerKind.DRMPC:
            # same total sample size as the rectangle
            n_cal = calibration_sample_size(g)
            train, calib = split(S, n_rect - n_cal, n_cal, seed)
            ctl = DRMPC(spec, nu=cfg.nu).fit(train, calib)
            complexity = f"{n_rect - n_cal}/{n_cal}"
        else:
            ctl = (SSMPC if kind is ControllerKind.SSMPC else RMPC)(spec)
            N = ctl.required_scenarios()
            if N > S.N:
                raise ValueError(f"history holds {S.N} windows, {name} needs {N}")
            ctl.fit(S.subset(np.random.default_rng(seed).permutation(S.N)[:N]))
            complexity = N
        T = 24 * cfg.days
        if len(sim) < T + H - 1:
            raise ValueError(f"simulation record has {len(sim)} hours, need {T + H - 1}")
        forecast = np.column_stack([sim.forecast, np.full(len(sim), cfg.ambient_mean_c)])
        start_hour = sim.timestamps[0].hour
        trace = run_rhc(RhcConfig(ctl, T, BUILDING_X0, sim.errors[:T, None], forecast=forecast,
                                  t0=start_hour, keep_policies=bool(cfg.input_check_samples)))
        cell = cfg.out_dir / "building" / name / f"seed{seed}"
        base.update(complexity=complexity, energy=float(trace.inputs.sum()),
                    max_solve_time=float(trace.solve_time.max()), hours=T)
        row = _cell_summary(trace, spec, ctl, cfg, cell, seed, base)
        row["violation_pct"] = 100.0 * row["violation_rate"]
        return row
    except Exception as exc:
        log.warning("cell %s failed: %s", base, exc)
        base.update(status=f"failed: {exc}", error=traceback.format_exc(limit=2))
        return base


def run_building(cfg: BenchmarkConfig) -> list[dict]:
    """Energy use (sum of hourly heating inputs) and comfort violations per controller."""
    jobs = [(cfg, c, H, s) for H in cfg.horizons for c in cfg.controllers for s in cfg.seeds]
    rows = _map(_building_cell, jobs, cfg.workers)
    root = cfg.out_dir / "building"
    root.mkdir(parents=True, exist_ok=True)
    write_rows(rows, root / "summary.csv")
    return rows


# ---------------------------------------------------------------------------
# Monte Carlo check of the set guarantees
# ---------------------------------------------------------------------------
def _mc_run(cfg: BenchmarkConfig, H: int, run: int, runs_seed: int) -> dict:
    g = cfg.guarantee
    ar = cfg.ar1
    n_cal = calibration_sample_size(g)
    n_rect = scenario_sample_size(rect_decision_count(H, 1), g)
    E = max(1, int(round(cfg.eval_samples * cfg.scale)))
    streams = _streams(runs_seed * 1_000_003 + run, 3 + 2 * len(cfg.train_sizes))

    def draw(s, n):
        return generate_ar1(dataclasses.replace(ar, seed=s), n, H)

    ev = draw(streams[0], E)
    out = {"run": run}
    rect = rect_fit(draw(streams[1], n_rect))
    out["rect"] = 1.0 - float(np.mean(rect.contains(ev.data)))
    nu = g.epsilon if cfg.nu is None else cfg.nu
    for j, n_tr in enumerate(cfg.train_sizes):
        tr = lift(draw(streams[3 + 2 * j], n_tr), "tanh")
        cal = lift(draw(streams[4 + 2 * j], n_cal), "tanh", tr.phi_mean)
        est = SVCUncertaintySet(nu=nu).fit(tr.data, phi_mean=tr.phi_mean).calibrate(cal.data, g)
        ev_l = lift(ev, "tanh", tr.phi_mean)
        out[f"svc{n_tr}"] = 1.0 - empirical_coverage(est.set_, ev_l.data)
    return out


def run_monte_carlo(cfg: BenchmarkConfig, full_scale: bool = False) -> list[dict]:
    """Empirical confidence ``beta_hat`` and violation statistics of the learned sets.

    Each run fits a rectangle to ``N`` fresh scenarios and, per training size,
    a calibrated SVC set; violation probabilities are estimated on fresh samples.
    """
    if full_scale:
        cfg = dataclasses.replace(cfg, runs=5000, eval_samples=20000, scale=1.0)
    R = max(1, int(round(cfg.runs * cfg.scale)))
    H = cfg.horizons[0]
    g = cfg.guarantee
    per_run = _map(_mc_run, [(cfg, H, r, cfg.seeds[0]) for r in range(R)], cfg.workers)
    n_cal = calibration_sample_size(g)
    n_rect = scenario_sample_size(rect_decision_count(H, 1), g)
    rows = []
    labels = [("rect", "RMPC", f"N = {n_rect}")]
    labels += [(f"svc{n}", "DRMPC", f"{n}/{n_cal}") for n in cfg.train_sizes]
    for key, method, size in labels:
        eps = np.array([r[key] for r in per_run])
        rows.append({"method": method, "sample_size": size, "runs": R,
                     "beta_hat": float(np.mean(eps > g.epsilon)),
                     "mean_eps": float(eps.mean()), "var_eps": float(eps.var(ddof=1)) if R > 1 else 0.0,
                     "std_eps": float(eps.std(ddof=1)) if R > 1 else 0.0})
    root = cfg.out_dir / "monte-carlo"
    root.mkdir(parents=True, exist_ok=True)
    write_rows(per_run, root / "runs.csv")
    write_rows(rows, root / "summary.csv")
    return rows


# ---------------------------------------------------------------------------
# 2-D example
# ---------------------------------------------------------------------------
EXAMPLE_2D_MEAN = np.array([0.0, 0.0])
EXAMPLE_2D_COV = np.array([[1.0, 0.8], [0.8, 1.0]])


def _polygon_area(uset, lo, hi, n) -> float:
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys)
    inside = uset.contains(np.column_stack([X.ravel(), Y.ravel()]))
    cell = (xs[1] - xs[0]) * (ys[1] - ys[0])
    return float(inside.sum() * cell)


def run_example_2d(cfg: BenchmarkConfig) -> dict:
    """Training classes, f on a grid, radii before and after calibration, and the
    rectangle fitted to the same total number of samples."""
    from ..control.validation import svc_support

    g = cfg.guarantee
    seed = cfg.seeds[0]
    rng = np.random.default_rng(seed)
    n_cal = calibration_sample_size(g)
    n_rect = scenario_sample_size(rect_decision_count(1, 2), g)
    W = rng.multivariate_normal(EXAMPLE_2D_MEAN, EXAMPLE_2D_COV, size=cfg.n_train_2d + n_cal)
    train, calib = W[:cfg.n_train_2d], W[cfg.n_train_2d:]
    nu = g.epsilon if cfg.nu is None else cfg.nu
    est = SVCUncertaintySet(nu=nu).fit(train)
    model = est.model_
    theta = est.theta_
    pre = est.set_
    est.calibrate(calib, g)
    post = est.set_
    rect_pts = rng.multivariate_normal(EXAMPLE_2D_MEAN, EXAMPLE_2D_COV, size=n_rect)
    rect = rect_fit(rect_pts)
    root = cfg.out_dir / "example-2d"
    root.mkdir(parents=True, exist_ok=True)
    labels = np.full(train.shape[0], "interior", dtype=object)
    labels[model.bsv_indices] = "boundary"
    labels[model.outlier_indices] = "outlier"
    pts = [{"set": "train", "w1": float(x[0]), "w2": float(x[1]), "label": lab,
            "alpha": float(a)} for x, lab, a in zip(train, labels, model.alphas)]
    pts += [{"set": "calib", "w1": float(x[0]), "w2": float(x[1]), "label": "calib",
             "alpha": 0.0} for x in calib]
    pts += [{"set": "rect", "w1": float(x[0]), "w2": float(x[1]), "label": "rect",
             "alpha": 0.0} for x in rect_pts]
    write_rows(pts, root / "points.csv")
    # bounding box of the calibrated set from its support function
    e = np.eye(2)
    s_hi = np.array([svc_support(post, e[k]) for k in range(2)])
    s_lo = np.array([-svc_support(post, -e[k]) for k in range(2)])
    lo = np.minimum(s_lo, rect.gamma_min) - 0.5
    hi = np.maximum(s_hi, rect.gamma_max) + 0.5
    xs = np.linspace(lo[0], hi[0], cfg.grid)
    ys = np.linspace(lo[1], hi[1], cfg.grid)
    X, Y = np.meshgrid(xs, ys)
    F = post.f(np.column_stack([X.ravel(), Y.ravel()]))
    write_rows([{"w1": float(a), "w2": float(b), "f": float(c)}
                for a, b, c in zip(X.ravel(), Y.ravel(), F)], root / "f_grid.csv")
    svc_area = _polygon_area(post, s_lo, s_hi, 4 * cfg.grid)
    rect_area = float(np.prod(rect.gamma_max - rect.gamma_min))
    summary = {
        "n_train": int(train.shape[0]), "n_calib": n_cal, "n_rect": n_rect, "nu": nu,
        "theta": theta, "theta_calibrated": post.radius,
        "n_sv": int(model.sv_indices.size), "n_boundary": int(model.bsv_indices.size),
        "n_outlier": int(model.outlier_indices.size),
        "calib_contained": bool(np.all(post.contains(calib))),
        "rect_gamma_min": rect.gamma_min.tolist(), "rect_gamma_max": rect.gamma_max.tolist(),
        "svc_area": svc_area, "rect_area": rect_area, "area_ratio": rect_area / svc_area,
        "pre_calibration_set": pre.to_dict(), "calibrated_set": post.to_dict(),
    }
    (root / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


# ---------------------------------------------------------------------------
# sample sizes
# ---------------------------------------------------------------------------
def sample_size_table(horizons, epsilons=(0.05,), betas=(0.05,), n_u: int = 1,
                      n_w: int = 1) -> list[dict]:
    """Required sample counts per method over a grid of ``H``, ``epsilon`` and ``beta``."""
    rows = []
    for eps in epsilons:
        for beta in betas:
            g = GuaranteeParams(eps, beta)
            n_cal = calibration_sample_size(g)
            for H in horizons:
                rows.append({"H": H, "epsilon": eps, "beta": beta,
                             "SSMPC": scenario_sample_size(df_decision_count(H, n_u, n_w), g),
                             "RMPC": scenario_sample_size(rect_decision_count(H, n_w), g),
                             "DRMPC_calib": n_cal})
    return rows


def run_benchmark(cfg: BenchmarkConfig, **kw):
    """Dispatch on ``cfg.benchmark``."""
    if cfg.benchmark == "two-mass-spring":
        return run_two_mass_spring(cfg)
    if cfg.benchmark == "building":
        return run_building(cfg)
    if cfg.benchmark == "monte-carlo":
        return run_monte_carlo(cfg, **kw)
    if cfg.benchmark == "example-2d":
        return run_example_2d(cfg)
    rows = sample_size_table(cfg.horizons, [cfg.epsilon], [cfg.beta])
    root = cfg.out_dir / "sample-size"
    root.mkdir(parents=True, exist_ok=True)
    write_rows(rows, root / "sample_size.csv")
    return rows
