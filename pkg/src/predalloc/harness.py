"""Scenarios, metrics and result files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .algorithms import DualController, PrimalController, SimTrace, run_controller, settle
from .model import SimConfig, fleet_from_config
from .oracle import OracleTracker
from .qos import build_polytope, check_nonempty
from .signals import ReferenceSignal, signal_from_spec

__all__ = [
    "ScenarioSpec",
    "RunReport",
    "ConfigError",
    "scenario_s1",
    "scenario_s2",
    "run_scenario",
    "tracking_error_pct",
    "recovery_ticks",
    "windup_recovery",
    "summarize",
    "build_signal",
    "check_fleet",
]

S1_LEVEL = 250.0
S1_PLATEAU = (20, 56)
S1_TICKS = 200


class ConfigError(ValueError):
    """Bad configuration or an empty QoS set; ``load`` names the offending load when known."""

    def __init__(self, msg, load=None):
        super().__init__(msg)
        self.load = load


@dataclass
class ScenarioSpec:
    name: str
    config: SimConfig
    plateau: tuple[int, int] | None = None  # infeasible stretch [start, end) of the reference
    settle_level: float | None = None  # start both controllers in steady state at this level

    @property
    def controllers(self) -> tuple[str, ...]:
        c = self.config.controller
        return ("primal", "dual") if c == "both" else (c,)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "config": self.config.to_dict(),
            "plateau": list(self.plateau) if self.plateau else None,
            "settle_level": self.settle_level,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(d["name"], SimConfig.from_dict(d["config"]), tuple(d["plateau"]) if d.get("plateau") else None, d.get("settle_level"))


@dataclass
class RunReport:
    spec: ScenarioSpec
    traces: dict
    summary: dict
    monitors: dict | None = None
    tracker: OracleTracker | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.monitors is None or bool(self.monitors.get("pass", False))

    def to_json(self) -> str:
        body = {"scenario": self.spec.to_dict(), "summary": self.summary, "monitors": self.monitors}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> dict:
        """Write ``trace.csv`` (primal when present), ``trace_dual.csv`` when both ran, and ``report.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        names = list(self.traces)
        for k, name in enumerate(names):
            path = out / ("trace.csv" if k == 0 else f"trace_{name}.csv")
            self.traces[name].to_csv(path)
            paths[name] = path
        (out / "report.json").write_text(self.to_json())
        paths["report"] = out / "report.json"
        return paths


def scenario_s1(seed: int = 0, ticks: int = S1_TICKS, plateau: tuple[int, int] = S1_PLATEAU, level: float = S1_LEVEL) -> ScenarioSpec:
    """Windup scenario: box-only fleet, feasible level, an infeasible plateau at 1.2 x capacity, then feasible again.

    The primal controller runs with a one-slot horizon and no ramp or
    energy limits.  Both controllers start in steady state at ``level``.
    """
    cap = 500.0  # sum of the desk fleet power maxima over 100 loads
    p0, p1 = plateau
    if not 0 <= p0 <= p1 <= ticks:
        raise ValueError("plateau must lie inside the run")
    levels = [[0, level]]
    if p1 > p0:
        levels += [[p0, 1.2 * cap], [p1, level]]
    cfg = SimConfig(
        n_loads=100,
        horizon=1,
        ticks=ticks,
        fleet={"desk": {"box_only": True}},
        signal={"kind": "step", "levels": levels},
        scale_margin=None,
        controller="both",
        monitors=False,
        seed=seed,
    )
    return ScenarioSpec("s1", cfg, (p0, p1), level)


def scenario_s2(seed: int = 0, ticks: int = 288, signal: dict | None = None, monitors: bool = True, n_p: int = 5) -> ScenarioSpec:
    """Tracking scenario: full QoS constraints, five-step preview, capacity-scaled synthetic (or CSV) reference."""
    cfg = SimConfig(
        n_loads=100,
        horizon=n_p,
        ticks=ticks,
        fleet={"desk": {"box_only": False}},
        signal=signal or {"kind": "synthetic", "seed": seed},
        scale_margin=0.9,
        controller="primal",
        monitors=monitors,
        seed=seed,
    )
    return ScenarioSpec("s2", cfg)


def check_fleet(cfg: SimConfig):
    """Build the fleet and verify every QoS set is non-empty."""
    try:
        fleet = fleet_from_config(cfg)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad fleet: {exc}") from exc
    for i, q in enumerate(fleet):
        ok, _ = check_nonempty(build_polytope(q, cfg.horizon))
        if not ok:
            raise ConfigError(f"load {i}: QoS set is empty for horizon {cfg.horizon}", load=i)
    return fleet


def build_signal(cfg: SimConfig, fleet) -> ReferenceSignal:
    spec = dict(cfg.signal)
    if cfg.scale_margin is None:
        spec.setdefault("scale", False)
    try:
        return signal_from_spec(spec, fleet, cfg.ticks + cfg.horizon, cfg.ts_minutes, cfg.scale_margin or 1.0)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad signal spec: {exc}") from exc


def run_scenario(spec: ScenarioSpec, keep_states: bool = False) -> RunReport:
    cfg = spec.config
    fleet = check_fleet(cfg)
    sig = build_signal(cfg, fleet)
    traces: dict[str, SimTrace] = {}
    tracker = None
    for name in spec.controllers:
        if name == "primal":
            ctrl = PrimalController.create(fleet, cfg.horizon, cfg.alpha)
            if spec.settle_level is not None:
                settle(ctrl, spec.settle_level)
                ctrl.state.tick = 0
            if cfg.monitors:
                tracker = OracleTracker(ctrl.polytopes, ctrl.hessian, ctrl.alpha)
            traces[name] = run_controller(
                ctrl, sig, cfg.ticks, monitor=tracker, preview_noise=cfg.preview_noise, seed=cfg.seed, keep_states=keep_states
            )
        else:
            dual = DualController.create(fleet, cfg.gamma)
            if spec.settle_level is not None:
                dual.lam = dual.equilibrium(spec.settle_level)
            traces[name] = run_controller(dual, sig, cfg.ticks)
    monitors = tracker.report() if tracker is not None else None
    return RunReport(spec, traces, summarize(traces, spec), monitors, tracker)


def tracking_error_pct(trace_or_err, s=None) -> float:
    """``100 * sum|e| / sum|s|``."""
    if s is None:
        err, s = trace_or_err.err, trace_or_err.s
    else:
        err = trace_or_err
    err, s = np.asarray(err, dtype=float), np.asarray(s, dtype=float)
    if err.size == 0:
        raise ValueError("empty trace")
    denom = float(np.abs(s).sum())
    if denom == 0:
        raise ValueError("tracking error undefined for an all-zero reference")
    return 100.0 * float(np.abs(err).sum()) / denom


def recovery_ticks(err, s, start: int, frac: float = 0.01) -> tuple[int, bool]:
    """Ticks after ``start`` until ``|e| < frac * s`` holds for the rest of the run.

    Returns ``(ticks, recovered)``; when it never settles the count runs to the end.
    """
    err, s = np.asarray(err, dtype=float), np.asarray(s, dtype=float)
    inside = np.abs(err[start:]) < frac * np.abs(s[start:])
    if inside.size == 0:
        return 0, True
    bad = np.flatnonzero(~inside)
    if bad.size == 0:
        return 0, True
    k = int(bad[-1]) + 1
    return k, k < inside.size


def windup_recovery(dual: SimTrace | None, primal: SimTrace | None, plateau: tuple[int, int], frac: float = 0.01, area_tol: float = 0.02) -> dict:
    """Recovery after the infeasible plateau ``[p0, p1)`` and the dual windup/recovery area balance."""
    p0, p1 = plateau
    out: dict = {"plateau": [p0, p1]}
    if p1 == p0:
        out.update(dual_recovery_ticks=0, primal_recovery_ticks=0, dual_recovered=True, primal_recovered=True)
        return out
    for name, tr in (("dual", dual), ("primal", primal)):
        if tr is None:
            continue
        k, ok = recovery_ticks(tr.err, tr.s, p1, frac)
        out[f"{name}_recovery_ticks"] = k
        out[f"{name}_recovered"] = ok
    if dual is not None:
        wind = float(np.abs(dual.err[p0:p1]).sum())
        rec = float(np.abs(dual.err[p1:]).sum())
        out["dual_windup_area"] = wind
        out["dual_recovery_area"] = rec
        out["dual_area_rel_diff"] = abs(wind - rec) / wind if wind > 0 else 0.0
        out["dual_area_balanced"] = bool(out["dual_area_rel_diff"] <= area_tol)
    return out


def _trace_summary(tr: SimTrace) -> dict:
    d = {
        "ticks": tr.ticks,
        "sum_abs_err_kw": float(np.abs(tr.err).sum()),
        "max_abs_err_kw": float(np.abs(tr.err).max(initial=0.0)),
    }
    try:
        d["tracking_error_pct"] = tracking_error_pct(tr)
    except ValueError:
        d["tracking_error_pct"] = None
    aux = tr.aux[~np.isnan(tr.aux)] if tr.ticks else np.zeros(0)
    d["aux_max"] = float(aux.max()) if aux.size else None
    return d


def summarize(traces: dict, spec: ScenarioSpec) -> dict:
    """Summary numbers computed only from trace columns, so a trace CSV reproduces them."""
    out = {name: _trace_summary(tr) for name, tr in traces.items()}
    if spec.plateau is not None:
        out["windup"] = windup_recovery(traces.get("dual"), traces.get("primal"), spec.plateau)
    return out


def summary_from_csv(paths: dict, spec: ScenarioSpec) -> dict:
    traces = {name: SimTrace.from_csv(p, name) for name, p in paths.items()}
    return summarize(traces, spec)
