"""Command-line entry point ``ddsmpc``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .benchmarks.studies import (BENCHMARKS, BenchmarkConfig, run_benchmark, sample_size_table,
                                 write_rows)
from .calibration import GuaranteeParams, calibrate, calibration_sample_size, empirical_coverage
from .scenarios import lift, load_csv
from .svc import SVCUncertaintySet, SvcUncertaintySet


def _config(args, name: str, **extra) -> BenchmarkConfig:
    if args.config:
        data = json.loads(Path(args.config).read_text())
        data.setdefault("benchmark", name)
        if data["benchmark"] != name:
            raise SystemExit(f"config is for {data['benchmark']!r}, command runs {name!r}")
    else:
        data = {"benchmark": name}
    if args.out is not None:
        data["out"] = args.out
    if args.seed is not None:
        data["seeds"] = [args.seed]
    if getattr(args, "workers", None):
        data["workers"] = args.workers
    data.update({k: v for k, v in extra.items() if v is not None})
    return BenchmarkConfig.from_dict(data)


def _print_rows(rows):
    if isinstance(rows, dict):
        print(json.dumps({k: v for k, v in rows.items() if not k.endswith("_set")}, indent=2))
        return
    for r in rows:
        print(", ".join(f"{k}={_short(v)}" for k, v in r.items() if k != "error"))


def _short(v):
    return f"{v:.6g}" if isinstance(v, float) else v


def cmd_sample_size(args):
    rows = sample_size_table(args.horizons, args.epsilon, args.beta, args.n_u, args.n_w)
    out = Path(args.out or "sample_size.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out)
    _print_rows(rows)


def _scenario_rows(args):
    S = load_csv(args.scenarios, args.horizon)
    if args.saturation == "none":
        return S.data, None
    L = lift(S, args.saturation)
    return L.data, L.phi_mean


def cmd_train_set(args):
    X, phi_mean = _scenario_rows(args)
    est = SVCUncertaintySet(nu=args.nu).fit(X, phi_mean=phi_mean)
    out = Path(args.out or "svc_set.json")
    est.set_.save(out)
    m = est.model_
    print(f"trained on {X.shape[0]} rows of dimension {X.shape[1]}: "
          f"{m.sv_indices.size} support vectors, {m.bsv_indices.size} on the boundary, "
          f"{m.outlier_indices.size} outliers, radius {est.theta_:.6g} -> {out}")


def cmd_calibrate(args):
    uset = SvcUncertaintySet.load(args.set)
    S = load_csv(args.scenarios, args.horizon)
    X = S.data if uset.phi_mean is None else lift(S, args.saturation, uset.phi_mean).data
    g = GuaranteeParams(args.epsilon, args.beta)
    res = calibrate(uset, X, g)
    out = Path(args.out or "svc_set_calibrated.json")
    res.uncertainty_set.save(out)
    print(f"radius {uset.radius:.6g} -> {res.theta_tilde:.6g} from {res.n_used} samples "
          f"(needed {calibration_sample_size(g)}) -> {out}")
    if args.eval is not None:
        E = load_csv(args.eval, args.horizon)
        Xe = E.data if uset.phi_mean is None else lift(E, args.saturation, uset.phi_mean).data
        print(f"coverage on {Xe.shape[0]} evaluation rows: "
              f"{empirical_coverage(res.uncertainty_set, Xe):.4f}")


def cmd_simulate(args):
    name = args.plant
    extra = {"controllers": [args.controller], "horizons": [args.horizon]}
    if args.steps is not None:
        if name == "building":
            extra["days"] = max(1, args.steps // 24)
        else:
            extra["T"] = args.steps
    cfg = _config(args, name, **extra)
    _print_rows(run_benchmark(cfg))


def cmd_benchmark(args):
    cfg = _config(args, args.name)
    _print_rows(run_benchmark(cfg))


def cmd_monte_carlo(args):
    cfg = _config(args, "monte-carlo", scale=args.scale)
    _print_rows(run_benchmark(cfg, full_scale=args.full_scale))


def cmd_example_2d(args):
    cfg = _config(args, "example-2d")
    _print_rows(run_benchmark(cfg))


def _common(p, out_help="output directory"):
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", help=out_help)
    p.add_argument("--seed", type=int, help="seed (overrides the configured seeds)")


def _scenario_args(p):
    p.add_argument("--scenarios", required=True, help="scenario CSV (one row per sample)")
    p.add_argument("--horizon", type=int, default=None, help="H, for column validation")
    p.add_argument("--saturation", choices=["tanh", "clamp", "none"], default="tanh",
                   help="lift rows to [phi; w] before fitting (default tanh)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddsmpc", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-size", help="required scenario counts per method")
    _common(p, "CSV path")
    p.add_argument("--horizons", type=int, nargs="+", default=list(range(1, 16)))
    p.add_argument("--epsilon", type=float, nargs="+", default=[0.05])
    p.add_argument("--beta", type=float, nargs="+", default=[0.05])
    p.add_argument("--n-u", type=int, default=1)
    p.add_argument("--n-w", type=int, default=1)
    p.set_defaults(func=cmd_sample_size)

    p = sub.add_parser("train-set", help="fit an SVC uncertainty set to scenarios")
    _common(p, "JSON path of the trained set")
    _scenario_args(p)
    p.add_argument("--nu", type=float, default=0.05)
    p.set_defaults(func=cmd_train_set)

    p = sub.add_parser("calibrate", help="resize a trained set on held-out scenarios")
    _common(p, "JSON path of the calibrated set")
    _scenario_args(p)
    p.add_argument("--set", required=True, help="trained set JSON")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--eval", help="optional CSV for an empirical coverage estimate")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="one closed-loop run per seed")
    _common(p)
    p.add_argument("--plant", choices=["two-mass-spring", "building"], default="two-mass-spring")
    p.add_argument("--controller", choices=["DRMPC", "SSMPC", "RMPC"], default="DRMPC")
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--steps", type=int, help="closed-loop steps (hours for the building)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run a named study")
    _common(p)
    p.add_argument("name", choices=BENCHMARKS)
    p.add_argument("--workers", type=int, help="process-pool size")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("monte-carlo", help="empirical check of the set guarantees")
    _common(p)
    p.add_argument("--scale", type=float, help="multiplies runs and evaluation samples")
    p.add_argument("--full-scale", action="store_true", help="5000 runs of 20000 samples")
    p.add_argument("--workers", type=int, help="process-pool size")
    p.set_defaults(func=cmd_monte_carlo)

    p = sub.add_parser("example-2d", help="2-D SVC set versus rectangle")
    _common(p)
    p.set_defaults(func=cmd_example_2d)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    np.set_printoptions(precision=6)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
