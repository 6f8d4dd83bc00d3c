"""Domain types and configuration shared by the rest of the package.

Indexing conventions
--------------------
Every load carries an augmented trajectory ``z^i`` of length ``n_p + 1``:

* slot 0 is the fictitious memory variable ``d^i_{t-1|t}`` (a surrogate for
  the power consumed on the previous tick),
* slots ``1..n_p`` are the planned powers ``d^i_{t|t}, ..., d^i_{t+n_p-1|t}``.

Slot 1 is what the load actually consumes on the current tick (the
1-based "element 2" in the usual mathematical notation).  Ensemble
quantities are stored as ``(n_loads, n_p + 1)`` arrays, load-major, so that
``z.ravel()`` gives the stacked vector ``[z^1, ..., z^N]``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

__all__ = [
    "LoadQoS",
    "EnsembleState",
    "ReferenceWindow",
    "SimConfig",
    "DESK_FLEET",
    "linspace_fleet",
    "desk_fleet",
    "consumed_power",
    "kwh_to_kw_steps",
    "fleet_from_config",
]

# Parameter ranges of the desk-scale fleet (energy in kWh, everything else in kW,
# kW/step or dimensionless).
DESK_FLEET = {
    "n_loads": 100,
    "zeta": (0.1, 4.0),
    "d": (0.0, 10.0),
    "r": (-0.5, 0.5),
    "e_kwh": (0.0, 4.0),
    "ts_minutes": 5.0,
}

_QOS_FIELDS = ("d_lo", "d_hi", "r_lo", "r_hi", "e_lo", "e_hi", "zeta", "zeta_bar")


@dataclass(frozen=True)
class LoadQoS:
    """QoS parameters and objective weights of one flexible load.

    Powers are in kW, ramp bounds in kW per step and window-energy bounds in
    kW*step (the sum of the planned powers over the horizon).  Infinite
    bounds are allowed and simply disable the matching constraint.
    ``zeta_bar`` defaults to ``zeta``.
    """

    d_lo: float
    d_hi: float
    r_lo: float = -math.inf
    r_hi: float = math.inf
    e_lo: float = -math.inf
    e_hi: float = math.inf
    zeta: float = 1.0
    zeta_bar: float | None = None

    def __post_init__(self):
        if self.zeta_bar is None:
            object.__setattr__(self, "zeta_bar", self.zeta)
        for name in _QOS_FIELDS:
            v = float(getattr(self, name))
            if math.isnan(v):
                raise ValueError(f"{name} is NaN")
            object.__setattr__(self, name, v)
        for lo, hi in (("d_lo", "d_hi"), ("r_lo", "r_hi"), ("e_lo", "e_hi")):
            if getattr(self, lo) > getattr(self, hi):
                raise ValueError(f"{lo}={getattr(self, lo)} exceeds {hi}={getattr(self, hi)}")
        if not (math.isfinite(self.d_lo) and math.isfinite(self.d_hi)):
            raise ValueError("power bounds must be finite")
        if not (0 < self.zeta < math.inf and 0 < self.zeta_bar < math.inf):
            raise ValueError("zeta and zeta_bar must be positive and finite")

    def replace(self, **changes) -> "LoadQoS":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {name: _encode_bound(getattr(self, name)) for name in _QOS_FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> "LoadQoS":
        kwargs = {}
        for name in _QOS_FIELDS:
            if name not in data:
                continue
            kwargs[name] = _decode_bound(data[name], name)
        return cls(**kwargs)


def _encode_bound(v):
    # JSON has no infinity; unbounded sides are written as null
    if v is None or math.isinf(v):
        return None
    return v


def _decode_bound(v, name):
    if v is not None:
        return float(v)
    if name.endswith("_lo"):
        return -math.inf
    if name.endswith("_hi"):
        return math.inf
    return None


def kwh_to_kw_steps(e_kwh: float, ts_minutes: float) -> float:
    """Convert an energy bound in kWh to the kW*step units used internally."""
    if ts_minutes <= 0:
        raise ValueError("sampling period must be positive")
    return e_kwh * 60.0 / ts_minutes


def _spaced(lo: float, hi: float, n: int) -> np.ndarray:
    if lo == hi:
        return np.full(n, lo)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("cannot space between an infinite and a different bound")
    vals = np.linspace(lo, hi, n)
    if n > 1:
        vals[0], vals[-1] = lo, hi
    return vals


def linspace_fleet(n: int, lo: LoadQoS, hi: LoadQoS) -> list[LoadQoS]:
    """Build ``n`` loads whose parameters are linearly spaced from ``lo`` to ``hi``.

    ``zeta_bar`` is set equal to ``zeta`` for every load.
    """
    if n < 1:
        raise ValueError("fleet needs at least one load")
    for name in _QOS_FIELDS[:-1]:
        if getattr(lo, name) > getattr(hi, name):
            raise ValueError(f"inverted bounds for {name}: {getattr(lo, name)} > {getattr(hi, name)}")
    cols = {name: _spaced(getattr(lo, name), getattr(hi, name), n) for name in _QOS_FIELDS[:-1]}
    fleet = []
    for i in range(n):
        kw = {name: float(cols[name][i]) for name in cols}
        kw["zeta_bar"] = kw["zeta"]
        fleet.append(LoadQoS(**kw))
    return fleet


def desk_fleet(
    n: int = 100,
    ts_minutes: float = 5.0,
    box_only: bool = False,
    zeta_bar: float | None = None,
) -> list[LoadQoS]:
    """The heterogeneous fleet of the simulation study.

    Power and energy upper bounds are spaced from 0 to their maxima, the
    lower bounds stay at their minima, the ramp limits are shared by every
    load and ``zeta`` is spaced over ``[0.1, 4]``.  ``box_only`` drops the
    ramp and energy limits.
    """
    z_lo, z_hi = DESK_FLEET["zeta"]
    d_lo, d_hi = DESK_FLEET["d"]
    r_lo, r_hi = DESK_FLEET["r"]
    e_lo, e_hi = (kwh_to_kw_steps(v, ts_minutes) for v in DESK_FLEET["e_kwh"])
    if box_only:
        r_lo, r_hi, e_lo, e_hi = -math.inf, math.inf, -math.inf, math.inf
    lo = LoadQoS(d_lo=d_lo, d_hi=d_lo, r_lo=r_lo, r_hi=r_hi, e_lo=e_lo, e_hi=e_lo if not box_only else e_hi, zeta=z_lo)
    hi = LoadQoS(d_lo=d_lo, d_hi=d_hi, r_lo=r_lo, r_hi=r_hi, e_lo=e_lo, e_hi=e_hi, zeta=z_hi)
    fleet = linspace_fleet(n, lo, hi)
    if zeta_bar is not None:
        fleet = [q.replace(zeta_bar=zeta_bar) for q in fleet]
    return fleet


def consumed_power(traj) -> float:
    """Power actually consumed this tick: the first forward slot."""
    return float(np.asarray(traj)[1])


@dataclass
class EnsembleState:
    """All augmented trajectories at one tick.

    ``z`` has shape ``(n_loads, n_p + 1)``; ``prev_consumed`` holds
    ``d^i_{t-1|t-1}``, the powers actually consumed on the previous tick.
    """

    z: np.ndarray
    prev_consumed: np.ndarray
    tick: int = 0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.prev_consumed = np.asarray(self.prev_consumed, dtype=float)
        if self.z.ndim != 2 or self.z.shape[1] < 2:
            raise ValueError("z must have shape (n_loads, n_p + 1) with n_p >= 1")
        if self.prev_consumed.shape != (self.z.shape[0],):
            raise ValueError("prev_consumed length must equal the number of loads")
        if not np.all(np.isfinite(self.z)):
            raise ValueError("trajectories must be finite")

    @property
    def n_loads(self) -> int:
        return self.z.shape[0]

    @property
    def n_p(self) -> int:
        return self.z.shape[1] - 1

    @property
    def consumed(self) -> np.ndarray:
        return self.z[:, 1]

    def flat(self) -> np.ndarray:
        return self.z.ravel()


@dataclass(frozen=True)
class ReferenceWindow:
    """Signal values needed by the tick-``t`` problem: ``s_{t-1}`` and ``s_t..s_{t+n_p-1}``."""

    s_prev: float
    s_future: np.ndarray

    def __post_init__(self):
        fut = np.asarray(self.s_future, dtype=float).reshape(-1)
        if fut.size < 1:
            raise ValueError("window needs at least one future sample")
        object.__setattr__(self, "s_future", fut)
        object.__setattr__(self, "s_prev", float(self.s_prev))

    @property
    def n_p(self) -> int:
        return self.s_future.size

    def stacked(self) -> np.ndarray:
        """``[s_{t-1}, s_t, ..., s_{t+n_p-1}]``, aligned with the trajectory slots."""
        return np.concatenate(([self.s_prev], self.s_future))

    @classmethod
    def from_samples(cls, samples: Sequence[float], t: int, n_p: int) -> "ReferenceWindow":
        """Window for tick ``t``; at ``t = 0`` the previous sample is taken as ``s_0``."""
        samples = np.asarray(samples, dtype=float)
        if t < 0 or t + n_p > samples.size:
            raise IndexError(f"signal of length {samples.size} cannot supply the window at tick {t}")
        s_prev = samples[t - 1] if t > 0 else samples[0]
        return cls(s_prev, samples[t : t + n_p])


@dataclass
class SimConfig:
    """Simulation configuration, serialisable to JSON.

    ``fleet`` is either ``{"linspace": {"n": .., "lo": {..}, "hi": {..}}}``,
    ``{"loads": [{..}, ...]}`` or ``{"desk": {"box_only": false}}``.  Energy
    bounds inside the config are in kWh and converted with ``ts_minutes``.
    ``signal`` is a dict with a ``kind`` key (``step``, ``synthetic``,
    ``feasible`` or ``csv``); see :func:`predalloc.signals.signal_from_spec`.
    ``alpha``/``gamma`` of ``None`` select the defaults
    ``0.99 / (zeta_max + N)`` and ``0.5 / sum(1 / zeta)``.
    """

    n_loads: int = 100
    horizon: int = 5
    ticks: int = 288
    alpha: float | None = None
    gamma: float | None = None
    ts_minutes: float = 5.0
    fleet: dict = field(default_factory=lambda: {"desk": {"box_only": False}})
    zeta_bar: float | None = None
    signal: dict = field(default_factory=lambda: {"kind": "synthetic", "seed": 0})
    scale_margin: float | None = 0.9
    controller: str = "primal"
    monitors: bool = False
    preview_noise: float = 0.0
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if self.n_loads < 1:
            raise ValueError("n_loads must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.ticks < 0:
            raise ValueError("ticks must be >= 0")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.controller not in ("primal", "dual", "both"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.scale_margin is not None and not 0 < self.scale_margin <= 1:
            raise ValueError("scale_margin must lie in (0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SimConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fleet_from_config(cfg: SimConfig) -> list[LoadQoS]:
    """Materialise the fleet described by ``cfg.fleet``."""
    spec: dict[str, Any] = cfg.fleet
    if len(spec) != 1:
        raise ValueError("fleet spec must have exactly one of 'linspace', 'loads', 'desk'")
    (kind, body), = spec.items()
    conv = lambda d: _kwh_fields(d, cfg.ts_minutes)  # noqa: E731
    if kind == "desk":
        fleet = desk_fleet(cfg.n_loads, cfg.ts_minutes, box_only=bool(body.get("box_only", False)))
    elif kind == "linspace":
        n = int(body.get("n", cfg.n_loads))
        fleet = linspace_fleet(n, LoadQoS.from_dict(conv(body["lo"])), LoadQoS.from_dict(conv(body["hi"])))
    elif kind == "loads":
        fleet = [LoadQoS.from_dict(conv(d)) for d in body]
    else:
        raise ValueError(f"unknown fleet kind {kind!r}")
    if len(fleet) != cfg.n_loads:
        raise ValueError(f"fleet has {len(fleet)} loads but n_loads={cfg.n_loads}")
    if cfg.zeta_bar is not None:
        fleet = [q.replace(zeta_bar=cfg.zeta_bar) for q in fleet]
    return fleet


def _kwh_fields(d: dict, ts_minutes: float) -> dict:
    out = dict(d)
    for key in ("e_lo", "e_hi"):
        if out.get(key) is not None:
            out[key] = kwh_to_kw_steps(float(out[key]), ts_minutes)
    return out
