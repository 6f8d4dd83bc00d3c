"""Reference signals: steps, synthetic balancing-reserve-like traces, CSV ingestion and capacity scaling."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import LoadQoS

__all__ = [
    "ReferenceSignal",
    "step_signal",
    "synthetic_brd",
    "ingest_csv",
    "scale_to_capacity",
    "feasible_reference",
    "signal_from_spec",
    "band_energy_fraction",
]


@dataclass(frozen=True, eq=False)
class ReferenceSignal:
    samples: np.ndarray
    ts_minutes: float = 5.0
    provenance: str = "synthetic"

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 1:
            raise ValueError("signal samples must be one-dimensional")
        if not np.all(np.isfinite(s)):
            raise ValueError("signal samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if not self.ts_minutes > 0:
            raise ValueError("sampling period must be positive")

    def __len__(self) -> int:
        return self.samples.size

    def with_samples(self, samples, provenance: str | None = None) -> "ReferenceSignal":
        return ReferenceSignal(samples, self.ts_minutes, provenance or self.provenance)

    def require(self, ticks: int, n_p: int) -> None:
        need = ticks + n_p
        if len(self) < need:
            raise ValueError(f"signal has {len(self)} samples; {ticks} ticks with horizon {n_p} need {need}")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["tick", "kw"])
            for t, v in enumerate(self.samples):
                w.writerow([t, repr(float(v))])


def step_signal(levels: Sequence[tuple[int, float]], total: int, ts_minutes: float = 5.0) -> ReferenceSignal:
    """Piecewise-constant signal; each ``(start, kw)`` holds until the next start.  Zero before the first."""
    if total < 0:
        raise ValueError("total must be >= 0")
    out = np.zeros(total)
    starts = [int(s) for s, _ in levels]
    for a, b in zip(starts, starts[1:]):
        if b <= a:
            raise ValueError(f"segment starts must be strictly increasing (got {a} then {b})")
    for k, (start, kw) in enumerate(levels):
        if not 0 <= start < max(total, 1):
            raise ValueError(f"segment start {start} outside [0, {total})")
        end = starts[k + 1] if k + 1 < len(starts) else total
        out[int(start) : end] = float(kw)
    return ReferenceSignal(out, ts_minutes, "step")


def _band_bins(total: int, band: tuple[float, float]) -> np.ndarray:
    lo_p, hi_p = band
    if not (2.0 <= lo_p <= hi_p):
        raise ValueError("band must satisfy 2 <= min_period <= max_period (in ticks)")
    k = np.arange(1, total // 2 + 1)
    periods = total / k
    bins = k[(periods >= lo_p) & (periods <= hi_p)]
    if bins.size == 0:
        raise ValueError(f"no frequency bin of a {total}-sample signal falls in band {band}")
    return bins


def synthetic_brd(
    seed: int,
    total: int,
    band: tuple[float, float] = (6.0, 288.0),
    amplitude: float = 1.0,
    ts_minutes: float = 5.0,
    n_tones: int = 6,
) -> ReferenceSignal:
    """Zero-mean stand-in for a balancing-reserve signal with peak ``|s| = amplitude``.

    A few sinusoids with random phases on in-band frequency bins plus a
    random walk that is band-passed in the frequency domain.  Every
    component lives on an exact DFT bin of the band, so out-of-band energy
    is at round-off level.
    """
    if amplitude == 0 or total == 0:
        return ReferenceSignal(np.zeros(total), ts_minutes, "synthetic")
    rng = np.random.default_rng(seed)
    bins = _band_bins(total, band)
    t = np.arange(total)
    tones = rng.choice(bins, size=min(n_tones, bins.size), replace=False)
    x = np.zeros(total)
    for k in tones:
        x += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * k * t / total + rng.uniform(0, 2 * np.pi))
    walk = np.cumsum(rng.standard_normal(total))
    spec = np.fft.rfft(walk)
    mask = np.zeros(spec.size, dtype=bool)
    mask[bins] = True
    spec[~mask] = 0.0
    smooth = np.fft.irfft(spec, n=total)
    if np.abs(smooth).max() > 0:
        x += smooth / np.abs(smooth).max()
    x -= x.mean()
    peak = np.abs(x).max()
    x = x * (amplitude / peak) if peak > 0 else x
    return ReferenceSignal(x, ts_minutes, "synthetic")


def band_energy_fraction(samples, band: tuple[float, float]) -> float:
    """Fraction of (non-DC) spectral energy inside the period band."""
    x = np.asarray(samples, dtype=float)
    spec = np.abs(np.fft.rfft(x - x.mean())) ** 2
    spec[0] = 0.0
    tot = spec.sum()
    if tot == 0:
        return 1.0
    bins = _band_bins(x.size, band)
    return float(spec[bins].sum() / tot)


def _parse_time(raw: str) -> float:
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        return datetime.fromisoformat(raw).timestamp() / 60.0


def ingest_csv(path, columns: dict | None = None, ts_target: float = 5.0, unit: str = "auto") -> ReferenceSignal:
    """Read a ``time, value`` CSV and resample it to ``ts_target`` minutes by linear interpolation.

    ``columns`` maps ``"time"`` and ``"value"`` to header names (defaults
    ``time`` and ``value``).  Timestamps are integer/float minutes or
    ISO-8601.  ``unit`` is ``"kW"``, ``"MW"`` or ``"auto"`` (MW when the
    value header mentions MW).  The resampled grid starts at the first
    timestamp and stops at the last grid point not after the final one.
    """
    cols = {"time": "time", "value": "value"}
    cols.update(columns or {})
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in header]
        try:
            ti, vi = header.index(cols["time"]), header.index(cols["value"])
        except ValueError as exc:
            raise ValueError(f"{path}: header lacks column {exc}") from None
        times, vals = [], []
        for n, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                tm, v = _parse_time(row[ti]), float(row[vi])
            except (IndexError, ValueError):
                raise ValueError(f"{path}: malformed row {n}: {row!r}") from None
            if not (math.isfinite(tm) and math.isfinite(v)):
                raise ValueError(f"{path}: non-finite value in row {n}")
            if times and tm <= times[-1]:
                raise ValueError(f"{path}: timestamps not increasing at row {n}")
            times.append(tm)
            vals.append(v)
    if not times:
        raise ValueError(f"{path}: no data rows")
    if unit == "auto":
        unit = "MW" if "mw" in cols["value"].lower() else "kW"
    if unit not in ("kW", "MW"):
        raise ValueError(f"unknown unit {unit!r}")
    v = np.array(vals) * (1000.0 if unit == "MW" else 1.0)
    t = np.array(times) - times[0]
    n = int(math.floor(t[-1] / ts_target + 1e-9)) + 1
    grid = np.arange(n) * ts_target
    return ReferenceSignal(np.interp(grid, t, v), ts_target, "csv")


def _capacity(fleet: Sequence[LoadQoS]) -> tuple[float, float]:
    if not fleet:
        raise ValueError("empty fleet")
    return float(sum(q.d_lo for q in fleet)), float(sum(q.d_hi for q in fleet))


def scale_to_capacity(sig: ReferenceSignal, fleet: Sequence[LoadQoS], margin: float = 0.9) -> ReferenceSignal:
    """Affine map of the signal range onto the capacity box shrunk about its midpoint by ``margin``."""
    if not 0 < margin <= 1:
        raise ValueError("margin must lie in (0, 1]")
    lo, hi = _capacity(fleet)
    mid, half = 0.5 * (lo + hi), 0.5 * margin * (hi - lo)
    x = sig.samples
    xmin, xmax = (float(x.min()), float(x.max())) if x.size else (0.0, 0.0)
    if xmax == xmin:
        if x.size:
            warnings.warn("constant reference: placed at the capacity midpoint", RuntimeWarning, stacklevel=2)
        return sig.with_samples(np.full(x.size, mid))
    y = mid - half + (x - xmin) * (2 * half / (xmax - xmin))
    return sig.with_samples(np.clip(y, mid - half, mid + half))


def feasible_reference(
    fleet: Sequence[LoadQoS],
    total: int,
    seed: int,
    n_p_max: int = 5,
    ramp_fraction: float = 0.8,
    ts_minutes: float = 5.0,
    return_loads: bool = False,
):
    """Sum of per-load random walks that every load can follow exactly.

    Each walk starts at its lower level, steps within ``ramp_fraction`` of
    the ramp bounds and stays in ``[max(d_lo, e_lo), min(d_hi, e_hi / n_p_max)]``,
    so every window of up to ``n_p_max`` samples meets the energy bounds.
    """
    rng = np.random.default_rng(seed)
    walks = np.zeros((len(fleet), total))
    for i, q in enumerate(fleet):
        lo = max(q.d_lo, q.e_lo)
        hi = min(q.d_hi, q.e_hi / n_p_max)
        if lo > hi:
            raise ValueError(f"load {i}: no constant level satisfies the bounds for horizons up to {n_p_max}")
        r_lo = ramp_fraction * max(q.r_lo, -(q.d_hi - q.d_lo))
        r_hi = ramp_fraction * min(q.r_hi, q.d_hi - q.d_lo)
        x = lo
        for t in range(total):
            walks[i, t] = x
            x = min(max(x + rng.uniform(r_lo, r_hi), lo), hi)
    sig = ReferenceSignal(walks.sum(axis=0), ts_minutes, "feasible")
    return (sig, walks) if return_loads else sig


def signal_from_spec(spec: dict, fleet: Sequence[LoadQoS], total: int, ts_minutes: float = 5.0, margin: float = 0.9):
    """Build a signal from a config dictionary (``kind`` = synthetic | step | csv | feasible)."""
    spec = dict(spec)
    kind = spec.pop("kind", "synthetic")
    scale = spec.pop("scale", kind in ("synthetic", "csv"))
    if kind == "synthetic":
        sig = synthetic_brd(
            int(spec.pop("seed", 0)),
            total,
            tuple(spec.pop("band", (6.0, 288.0))),
            float(spec.pop("amplitude", 1.0)),
            ts_minutes,
        )
    elif kind == "step":
        sig = step_signal([tuple(x) for x in spec.pop("levels", [])], total, ts_minutes)
    elif kind == "csv":
        sig = ingest_csv(spec.pop("path"), spec.pop("columns", None), ts_minutes, spec.pop("unit", "auto"))
        if len(sig) < total:
            raise ValueError(f"CSV signal has {len(sig)} samples after resampling; {total} needed")
        sig = sig.with_samples(sig.samples[:total])
    elif kind == "feasible":
        sig = feasible_reference(fleet, total, int(spec.pop("seed", 0)), int(spec.pop("n_p_max", 5)), ts_minutes=ts_minutes)
    else:
        raise ValueError(f"unknown signal kind {kind!r}")
    if spec:
        raise ValueError(f"unknown signal options for {kind!r}: {sorted(spec)}")
    return scale_to_capacity(sig, fleet, margin) if scale else sig
