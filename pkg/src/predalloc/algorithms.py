"""Online controllers: the shifted projected-gradient primal update and the dual-ascent baseline."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .gradient import (
    HessianOperator,
    aggregate_error,
    assemble_hessian,
    ensemble_local_gradients,
    input_vector,
    shift,
)
from .model import EnsembleState, LoadQoS, ReferenceWindow
from .qos import FEAS_TOL, ProjectionError, QoSPolytope, build_polytope, check_nonempty, project

__all__ = [
    "PrimalController",
    "DualController",
    "SimTrace",
    "primal_tick",
    "dual_tick",
    "run_controller",
    "default_alpha",
    "default_gamma",
    "TRACE_HEADER",
    "settle",
    "feasibility_ok",
]

TRACE_HEADER = ("tick", "s_kw", "total_kw", "err_kw", "aux", "ramp_max_kw")


def default_alpha(fleet: Sequence[LoadQoS]) -> float:
    """``0.99 / (zeta_max + N)``."""
    zmax = max(max(q.zeta, q.zeta_bar) for q in fleet)
    return 0.99 / (zmax + len(fleet))


def default_gamma(fleet: Sequence[LoadQoS]) -> float:
    """Half the reciprocal Lipschitz constant ``sum_i 1/zeta^i`` of the dual gradient."""
    return 0.5 / sum(1.0 / q.zeta for q in fleet)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("PREDALLOC_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class PrimalController:
    """Per-load update ``z^i <- Proj_{D^i}(shift(z^i - alpha * grad_i eta(z)))``."""

    fleet: list
    polytopes: list
    alpha: float
    hessian: HessianOperator
    state: EnsembleState
    tol: float = 1e-9
    projections: int = 0
    broadcasts: int = 0
    box: tuple | None = None  # (lo, hi) when every load is box-only: projection is a clip

    @classmethod
    def create(cls, fleet: Sequence[LoadQoS], n_p: int, alpha: float | None = None, z0=None, prev0=None):
        fleet = list(fleet)
        polys = [build_polytope(q, n_p) for q in fleet]
        if z0 is None:
            rows = []
            for i, p in enumerate(polys):
                ok, witness = check_nonempty(p)
                if not ok:
                    raise ProjectionError(f"QoS set of load {i} is empty", load=i)
                rows.append(project(p, np.zeros(p.dim)).point)
            z0 = np.array(rows)
        z0 = np.asarray(z0, dtype=float)
        if prev0 is None:
            prev0 = z0[:, 0]
        H = assemble_hessian(fleet, n_p)
        alpha = default_alpha(fleet) if alpha is None else float(alpha)
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        box = None
        if all(math.isinf(q.r_lo) and math.isinf(q.r_hi) and math.isinf(q.e_lo) and math.isinf(q.e_hi) for q in fleet):
            box = (np.array([[q.d_lo] for q in fleet]), np.array([[q.d_hi] for q in fleet]))
        return cls(fleet, polys, alpha, H, EnsembleState(z0, prev0, 0), box=box)

    @property
    def n_p(self) -> int:
        return self.hessian.n_p

    def input_vector(self, ref: ReferenceWindow) -> np.ndarray:
        return input_vector(self.state.prev_consumed, ref, self.hessian.zeta_bars)

    def _project_all(self, pts: np.ndarray) -> np.ndarray:
        def one(i):
            try:
                return project(self.polytopes[i], pts[i], tol=self.tol).point
            except ProjectionError as exc:
                exc.load = i
                raise ProjectionError(f"load {i}: {exc}", exc.point, exc.residual, load=i) from exc

        n = len(self.polytopes)
        if self.box is not None:
            out = pts.copy()
            out[:, 1:] = np.clip(pts[:, 1:], *self.box)
            self.projections += n
            return out
        workers = _workers()
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                rows = list(ex.map(one, range(n)))
        else:
            rows = [one(i) for i in range(n)]
        self.projections += n
        return np.array(rows)

    def step(self, ref: ReferenceWindow) -> tuple[EnsembleState, float]:
        """Advance one tick.

        Returns the new state and the total power consumed on this tick
        (slot 1 of the state entering the tick).  The consumed powers become
        ``prev_consumed`` of the new state.
        """
        if ref.n_p != self.n_p:
            raise ValueError(f"window has horizon {ref.n_p}, controller uses {self.n_p}")
        st = self.state
        agg = aggregate_error(st.z, ref)
        self.broadcasts += 1
        g = ensemble_local_gradients(self.hessian, st.z, agg, st.prev_consumed)
        psi = st.z - self.alpha * g
        z_new = self._project_all(shift(psi))
        consumed = st.z[:, 1].copy()
        self.state = EnsembleState(z_new, consumed, st.tick + 1)
        return self.state, float(consumed.sum())

    def max_violation(self) -> float:
        return max(p.violation(row) for p, row in zip(self.polytopes, self.state.z))


def primal_tick(ctrl: PrimalController, ref: ReferenceWindow) -> tuple[EnsembleState, float]:
    return ctrl.step(ref)


@dataclass
class DualController:
    """Dual ascent on the tracking equality with box-only loads.

    ``lambda_t = lambda_{t-1} + gamma * (s_{t-1} - sum_i d^i_{t-1})`` and
    ``d^i_t = clip(lambda_t / zeta^i, d_lo^i, d_hi^i)``.  No anti-windup.
    """

    gamma: float
    zetas: np.ndarray
    d_lo: np.ndarray
    d_hi: np.ndarray
    lam: float = 0.0

    @classmethod
    def create(cls, fleet: Sequence[LoadQoS], gamma: float | None = None, lam0: float = 0.0):
        gamma = default_gamma(fleet) if gamma is None else float(gamma)
        if not gamma > 0:
            raise ValueError("gamma must be positive")
        return cls(
            gamma,
            np.array([q.zeta for q in fleet]),
            np.array([q.d_lo for q in fleet]),
            np.array([q.d_hi for q in fleet]),
            float(lam0),
        )

    def equilibrium(self, level: float) -> float:
        """Multiplier at which the clipped powers sum to ``level`` (smallest such value)."""
        lo, hi = float(self.d_lo.sum()), float(self.d_hi.sum())
        if not lo <= level <= hi:
            raise ValueError(f"level {level} outside the capacity range [{lo}, {hi}]")
        f = lambda lam: float(np.clip(lam / self.zetas, self.d_lo, self.d_hi).sum()) - level  # noqa: E731
        a, b = float((self.d_lo * self.zetas).min()), float((self.d_hi * self.zetas).max())
        if f(a) >= 0:
            return a
        return float(brentq(f, a, b, xtol=1e-14, rtol=4 * np.finfo(float).eps))

    def powers(self) -> np.ndarray:
        return np.clip(self.lam / self.zetas, self.d_lo, self.d_hi)

    def step(self, s_prev: float, prev_total: float) -> tuple[float, np.ndarray]:
        err = prev_total - s_prev
        self.lam = self.lam - self.gamma * err
        return self.lam, self.powers()


def dual_tick(ctrl: DualController, s_prev: float, prev_total: float) -> tuple[float, np.ndarray]:
    return ctrl.step(s_prev, prev_total)


@dataclass
class SimTrace:
    """Per-tick record of one controller run."""

    controller: str
    s: np.ndarray
    total: np.ndarray
    aux: np.ndarray
    ramp_max: np.ndarray = field(default_factory=lambda: np.zeros(0))
    anchor_gap: np.ndarray = field(default_factory=lambda: np.zeros(0))
    powers: np.ndarray | None = None
    states: list | None = None
    inputs: list | None = None

    @property
    def err(self) -> np.ndarray:
        return self.total - self.s

    @property
    def ticks(self) -> int:
        return self.s.size

    def rows(self):
        for t in range(self.ticks):
            aux = "" if np.isnan(self.aux[t]) else repr(float(self.aux[t]))
            ramp = repr(float(self.ramp_max[t])) if self.ramp_max.size == self.ticks else ""
            yield (t, repr(float(self.s[t])), repr(float(self.total[t])), repr(float(self.err[t])), aux, ramp)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            w.writerows(self.rows())

    @classmethod
    def from_csv(cls, path, controller: str = "") -> "SimTrace":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != TRACE_HEADER:
                raise ValueError(f"{path}: expected header {','.join(TRACE_HEADER)}")
            s, total, aux, ramp = [], [], [], []
            for n, row in enumerate(reader, start=2):
                if len(row) != len(TRACE_HEADER):
                    raise ValueError(f"{path}:{n}: expected {len(TRACE_HEADER)} fields")
                s.append(float(row[1]))
                total.append(float(row[2]))
                aux.append(float(row[4]) if row[4] else np.nan)
                ramp.append(float(row[5]) if row[5] else np.nan)
        return cls(controller, np.array(s), np.array(total), np.array(aux), ramp_max=np.array(ramp))


def _window(samples, t, n_p, noise, rng):
    ref = ReferenceWindow.from_samples(samples, t, n_p)
    if noise > 0:
        # only the preview is noisy; s_t itself is measured
        fut = ref.s_future.copy()
        fut[1:] += noise * rng.standard_normal(fut.size - 1)
        ref = ReferenceWindow(ref.s_prev, fut)
    return ref


def run_controller(
    ctrl,
    signal,
    ticks: int,
    monitor=None,
    preview_noise: float = 0.0,
    seed: int = 0,
    keep_powers: bool = False,
    keep_states: bool = False,
) -> SimTrace:
    """Drive a controller over ``ticks`` ticks of ``signal``.

    ``monitor`` (an :class:`predalloc.oracle.OracleTracker`) is fed every
    window and state of a primal run; its optimality gap goes to ``aux``.
    For the dual controller ``aux`` carries the multiplier.
    """
    samples = np.asarray(getattr(signal, "samples", signal), dtype=float)
    if ticks < 0:
        raise ValueError("ticks must be >= 0")
    rng = np.random.default_rng(seed)
    s = samples[:ticks].copy()
    if s.size < ticks:
        raise ValueError(f"signal has {samples.size} samples, {ticks} ticks requested")
    total = np.zeros(ticks)
    aux = np.full(ticks, np.nan)
    ramp = np.zeros(ticks)
    gap = np.zeros(ticks)
    powers = [] if keep_powers else None

    if isinstance(ctrl, PrimalController):
        n_p = ctrl.n_p
        if ticks and samples.size < ticks - 1 + n_p:
            raise ValueError(f"signal too short: {ticks} ticks need {ticks - 1 + n_p} samples with preview")
        states, inputs = ([], []) if (keep_states or monitor is not None) else (None, None)
        for t in range(ticks):
            ref = _window(samples, t, n_p, preview_noise, rng)
            st = ctrl.state
            if states is not None:
                states.append(st.z.copy())
                inputs.append(ctrl.input_vector(ref))
            if monitor is not None:
                aux[t] = monitor.observe(ref, st.z, st.prev_consumed)
            d_now = st.z[:, 1]
            ramp[t] = float(np.abs(d_now - st.prev_consumed).max()) if t > 0 else 0.0
            gap[t] = float(np.abs(st.z[:, 0] - st.prev_consumed).max())
            if keep_powers:
                powers.append(d_now.copy())
            _, total[t] = ctrl.step(ref)
        name = "primal"
    elif isinstance(ctrl, DualController):
        prev_total = None
        prev_d = None
        for t in range(ticks):
            s_prev = samples[t - 1] if t > 0 else samples[0]
            lam, d = ctrl.step(s_prev, s_prev if prev_total is None else prev_total)
            total[t] = float(d.sum())
            aux[t] = lam
            ramp[t] = 0.0 if prev_d is None else float(np.abs(d - prev_d).max())
            if keep_powers:
                powers.append(d.copy())
            prev_total, prev_d = total[t], d
        states = inputs = None
        name = "dual"
    else:
        raise TypeError(f"unsupported controller {type(ctrl).__name__}")
    return SimTrace(
        name,
        s,
        total,
        aux,
        ramp_max=ramp,
        anchor_gap=gap,
        powers=np.array(powers) if keep_powers else None,
        states=states,
        inputs=inputs,
    )


def settle(ctrl: PrimalController, level: float, max_ticks: int = 200_000, tol: float = 1e-10) -> int:
    """Run the primal controller on a constant reference until its state stops moving.

    Returns the number of ticks used.  Used to start scenarios from steady state.
    """
    ref = ReferenceWindow(level, np.full(ctrl.n_p, level))
    for k in range(1, max_ticks + 1):
        before = ctrl.state.z
        ctrl.step(ref)
        if np.abs(ctrl.state.z - before).max() <= tol:
            return k
    return max_ticks


def feasibility_ok(ctrl: PrimalController, tol: float = FEAS_TOL) -> bool:
    return ctrl.max_violation() <= tol
