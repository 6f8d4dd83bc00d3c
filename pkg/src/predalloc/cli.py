"""Command line entry point: ``predalloc run|scenario|check|monitors``.

Exit codes: 0 success, 1 configuration error or empty QoS set, 2 monitor violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .algorithms import SimTrace, default_alpha
from .gradient import assemble_hessian, contraction_factor, step_size_bound
from .harness import ConfigError, ScenarioSpec, check_fleet, run_scenario, scenario_s1, scenario_s2
from .model import SimConfig

EXIT_OK, EXIT_CONFIG, EXIT_MONITOR = 0, 1, 2


def _load_config(path) -> SimConfig:
    try:
        return SimConfig.load(path)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _emit(report, out_dir) -> int:
    paths = report.write(out_dir)
    print(json.dumps(report.summary, indent=2, sort_keys=True))
    for name, p in paths.items():
        print(f"wrote {name}: {p}", file=sys.stderr)
    if not report.ok:
        print("monitor violation", file=sys.stderr)
        return EXIT_MONITOR
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    spec = ScenarioSpec(Path(args.config).stem, cfg)
    return _emit(run_scenario(spec), args.out or cfg.out_dir or ".")


def cmd_scenario(args) -> int:
    if args.name == "s1":
        spec = scenario_s1(seed=args.seed, **({"ticks": args.ticks} if args.ticks is not None else {}))
    else:
        kw = {"ticks": args.ticks} if args.ticks is not None else {}
        sig = {"kind": "csv", "path": args.csv} if args.csv else None
        spec = scenario_s2(seed=args.seed, signal=sig, monitors=not args.no_monitors, **kw)
    return _emit(run_scenario(spec), args.out or ".")


def cmd_check(args) -> int:
    cfg = _load_config(args.config)
    fleet = check_fleet(cfg)
    H = assemble_hessian(fleet, cfg.horizon)
    a_suff, a_exact = step_size_bound(fleet, cfg.horizon)
    alpha = cfg.alpha if cfg.alpha is not None else default_alpha(fleet)
    rep = {
        "loads": len(fleet),
        "horizon": cfg.horizon,
        "feasible": True,
        "alpha": alpha,
        "alpha_sufficient": a_suff,
        "alpha_exact_max": a_exact,
        "lambda_min": H.lambda_min,
        "lambda_max": H.lambda_max,
        "M_alpha": contraction_factor(H, alpha),
        "alpha_admissible": bool(alpha * H.lambda_max < 1),
    }
    print(json.dumps(rep, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_monitors(args) -> int:
    cfg = _load_config(args.config)
    cfg.monitors = True
    if cfg.controller != "primal":
        raise ConfigError("monitors need a primal-controller config")
    try:
        given = SimTrace.from_csv(args.trace)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trace: {exc}") from None
    report = run_scenario(ScenarioSpec(Path(args.config).stem, cfg))
    ours = report.traces["primal"]
    same = given.ticks == ours.ticks and np.array_equal(given.s, ours.s) and np.array_equal(given.total, ours.total)
    rep = dict(report.monitors)
    rep["trace_matches"] = bool(same)
    rep["pass"] = bool(rep["pass"] and same)
    text = json.dumps(rep, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK if rep["pass"] else EXIT_MONITOR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="predalloc", description="Predictive allocation of flexible loads")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a JSON config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("scenario", help="run a built-in scenario")
    s.add_argument("name", choices=("s1", "s2"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ticks", type=int)
    s.add_argument("--out", help="output directory")
    s.add_argument("--csv", help="s2 only: reference CSV with time,value columns")
    s.add_argument("--no-monitors", action="store_true", help="s2 only: skip the oracle monitors")
    s.set_defaults(func=cmd_scenario)

    c = sub.add_parser("check", help="feasibility and step-size report for a config")
    c.add_argument("config")
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("monitors", help="re-simulate a config, compare with a trace, run the monitors")
    m.add_argument("trace")
    m.add_argument("config")
    m.add_argument("--out", help="write the monitor JSON here")
    m.set_defaults(func=cmd_monitors)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
