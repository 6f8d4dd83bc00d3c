"""Per-load QoS polytopes and exact Euclidean projection onto them.

A load's time-invariant QoS set over the augmented trajectory
``y = [y0, y1, ..., y_np]`` is written as ``A y <= b`` with rows, in order:

=====================  ==========================================
rows ``0 .. np-1``     power upper bound   ``y[k] <= d_hi``
rows ``np .. 2np-1``   power lower bound   ``-y[k] <= -d_lo``
rows ``2np .. 3np-1``  ramp upper bound    ``y[k] - y[k-1] <= r_hi``
rows ``3np .. 4np-1``  ramp lower bound    ``y[k-1] - y[k] <= -r_lo``
row ``4np``            energy upper bound  ``sum_k y[k] <= e_hi``
row ``4np + 1``        energy lower bound  ``-sum_k y[k] <= -e_lo``
=====================  ==========================================

with ``k = 1..np``.  The memory slot ``y0`` has no box of its own; it is
tied to ``y1`` by the ``k = 1`` ramp rows, which also play the role of the
ramp constraint against the previously consumed power.  Unbounded sides
carry ``b = inf`` and never become active.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import LoadQoS

__all__ = [
    "QoSPolytope",
    "ProjectionResult",
    "ProjectionError",
    "InfeasiblePolytopeError",
    "build_polytope",
    "check_nonempty",
    "project",
    "solve_qp_diag",
    "dykstra_project",
    "enumerate_project",
]

FEAS_TOL = 1e-8


class ProjectionError(RuntimeError):
    """Projection did not converge; carries the best iterate found."""

    def __init__(self, msg, point=None, residual=math.inf, load=None):
        super().__init__(msg)
        self.point = point
        self.residual = residual
        self.load = load


class InfeasiblePolytopeError(ProjectionError):
    """The polytope is empty."""


@dataclass(frozen=True)
class QoSPolytope:
    A: np.ndarray
    b: np.ndarray
    labels: tuple
    n_p: int
    qos: LoadQoS

    @property
    def dim(self) -> int:
        return self.n_p + 1

    def violation(self, y) -> float:
        """Largest constraint violation ``max(A y - b)``, clipped at zero."""
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            r = self.A @ y - self.b
        r = r[np.isfinite(self.b)]
        return float(max(0.0, r.max(initial=0.0)))

    def contains(self, y, tol: float = FEAS_TOL) -> bool:
        return self.violation(y) <= tol

    def to_csv(self, path) -> None:
        """Dump ``label, b, a_0 .. a_np`` rows for debugging."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label", "b"] + [f"a{k}" for k in range(self.dim)])
            for lab, row, rhs in zip(self.labels, self.A, self.b):
                w.writerow([lab, repr(float(rhs))] + [repr(float(v)) for v in row])


@dataclass
class ProjectionResult:
    point: np.ndarray
    active_rows: tuple
    iterations: int
    residual: float
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))


def build_polytope(q: LoadQoS, n_p: int) -> QoSPolytope:
    """Half-space form of the QoS set of load ``q`` over a horizon ``n_p``."""
    if n_p < 1:
        raise ValueError("horizon must be >= 1")
    n = n_p + 1
    eye = np.eye(n)[1:]
    diff = np.zeros((n_p, n))
    for k in range(1, n):
        diff[k - 1, k] = 1.0
        diff[k - 1, k - 1] = -1.0
    total = np.zeros((1, n))
    total[0, 1:] = 1.0
    A = np.vstack([eye, -eye, diff, -diff, total, -total])
    b = np.concatenate(
        [
            np.full(n_p, q.d_hi),
            np.full(n_p, -q.d_lo),
            np.full(n_p, q.r_hi),
            np.full(n_p, -q.r_lo),
            [q.e_hi, -q.e_lo],
        ]
    )
    labels = tuple(
        [f"power-hi[{k}]" for k in range(1, n)]
        + [f"power-lo[{k}]" for k in range(1, n)]
        + [f"rate-hi[{k}]" for k in range(1, n)]
        + [f"rate-lo[{k}]" for k in range(1, n)]
        + ["energy-hi", "energy-lo"]
    )
    A.setflags(write=False)
    b.setflags(write=False)
    return QoSPolytope(A=A, b=b, labels=labels, n_p=n_p, qos=q)


def solve_qp_diag(w, c, A, b, tol: float = 1e-9, max_iter: int = 500) -> ProjectionResult:
    """Minimise ``0.5 y'Wy - c'y`` subject to ``A y <= b`` for diagonal ``W > 0``.

    Goldfarb-Idnani dual active-set method: start from the unconstrained
    minimiser, add the most violated row (lowest index on ties), and drop
    rows whose multipliers would turn negative.  Rows with infinite ``b``
    are ignored.
    """
    w = np.asarray(w, dtype=float)
    c = np.asarray(c, dtype=float)
    winv = 1.0 / w
    x = winv * c
    finite = np.flatnonzero(np.isfinite(b))
    Af = A[finite]
    bf = np.asarray(b, dtype=float)[finite]
    act: list[int] = []
    u = np.zeros(0)
    iters = 0
    eps = 1e-12
    while True:
        slack = bf - Af @ x
        p = int(np.argmin(slack)) if slack.size else -1
        if p < 0 or slack[p] >= -tol:
            break
        n_p_vec = -Af[p]  # inward normal: n'x >= -b
        u_plus = np.append(u, 0.0)
        while True:
            iters += 1
            if iters > max_iter:
                raise ProjectionError(
                    f"active-set iteration limit {max_iter} reached",
                    point=x.copy(),
                    residual=float(max(0.0, -(bf - Af @ x).min(initial=0.0))),
                )
            if act:
                Nmat = -Af[act].T  # columns are inward normals of active rows
                WN = winv[:, None] * Nmat
                M = Nmat.T @ WN
                Nstar = np.linalg.solve(M, WN.T)
                r = Nstar @ n_p_vec
                z = winv * n_p_vec - WN @ r
            else:
                r = np.zeros(0)
                z = winv * n_p_vec
            s_p = float(n_p_vec @ x + bf[p])
            t1, k = math.inf, -1
            for j in range(r.size):
                if r[j] > eps:
                    cand = u_plus[j] / r[j]
                    if cand < t1:
                        t1, k = cand, j
            zn = float(z @ n_p_vec)
            t2 = -s_p / zn if np.abs(z).max(initial=0.0) > eps else math.inf
            if math.isinf(t1) and math.isinf(t2):
                raise InfeasiblePolytopeError("constraints are inconsistent", point=x.copy())
            if math.isinf(t2):
                u_plus[: r.size] -= t1 * r
                u_plus[-1] += t1
                del act[k]
                u_plus = np.delete(u_plus, k)
                continue
            t = min(t1, t2)
            x = x + t * z
            u_plus[: r.size] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                act.append(p)
                u = u_plus
                break
            del act[k]
            u_plus = np.delete(u_plus, k)
    viol = float(max(0.0, -(bf - Af @ x).min(initial=0.0)))
    return ProjectionResult(
        point=x,
        active_rows=tuple(int(finite[j]) for j in act),
        iterations=iters,
        residual=viol,
        multipliers=u,
    )


def project(p: QoSPolytope, x, tol: float = 1e-9, max_iter: int = 500) -> ProjectionResult:
    """Euclidean projection of ``x`` onto the polytope ``p``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.dim,):
        raise ValueError(f"expected a vector of length {p.dim}, got shape {x.shape}")
    return solve_qp_diag(np.ones(p.dim), x, p.A, p.b, tol=tol, max_iter=max_iter)


def check_nonempty(p: QoSPolytope) -> tuple[bool, np.ndarray | None]:
    """Decide whether ``p`` is non-empty and return a feasible witness if so."""
    q, n_p = p.qos, p.n_p
    lo = max(q.d_lo, q.e_lo / n_p)
    hi = min(q.d_hi, q.e_hi / n_p)
    if q.r_lo <= 0.0 <= q.r_hi and lo <= hi:
        return True, np.full(p.dim, 0.5 * (lo + hi))
    mid = 0.5 * (q.d_lo + q.d_hi)
    try:
        res = project(p, np.full(p.dim, mid))
    except InfeasiblePolytopeError:
        return False, None
    if res.residual <= FEAS_TOL:
        return True, res.point
    return False, None


def _dykstra_bounds(p: QoSPolytope):
    q = p.qos
    return q.d_lo, q.d_hi, q.r_lo, q.r_hi, q.e_lo, q.e_hi


def dykstra_project(p: QoSPolytope, x, tol: float = 1e-10, max_iter: int = 200_000) -> ProjectionResult:
    """Projection by Dykstra's alternating projections.

    The sets are the box on the forward slots, the ramp rows on odd pairs,
    the ramp rows on even pairs (each family of disjoint pairs has a
    closed-form projection) and the energy slab.  Independent of
    :func:`project`; meant as a test oracle.
    """
    if max_iter < 1:
        raise ProjectionError("iteration budget exhausted before the first sweep", point=np.asarray(x, float))
    d_lo, d_hi, r_lo, r_hi, e_lo, e_hi = _dykstra_bounds(p)
    n_p = p.n_p
    odd = [(k - 1, k) for k in range(1, n_p + 1, 2)]
    even = [(k - 1, k) for k in range(2, n_p + 1, 2)]

    def box(v):
        v = v.copy()
        v[1:] = np.clip(v[1:], d_lo, d_hi)
        return v

    def pairs(idx):
        def proj(v):
            v = v.copy()
            for a, b_ in idx:
                delta = v[b_] - v[a]
                adj = (min(max(delta, r_lo), r_hi) - delta) / 2.0
                v[a] -= adj
                v[b_] += adj
            return v

        return proj

    def energy(v):
        v = v.copy()
        tot = v[1:].sum()
        v[1:] += (min(max(tot, e_lo), e_hi) - tot) / n_p
        return v

    projs = [box, pairs(odd), energy] + ([pairs(even)] if even else [])
    y = np.asarray(x, dtype=float).copy()
    incr = [np.zeros_like(y) for _ in projs]
    for it in range(1, max_iter + 1):
        y_start = y.copy()
        moved = 0.0
        for j, P in enumerate(projs):
            tmp = y + incr[j]
            y_new = P(tmp)
            new_incr = tmp - y_new
            moved = max(moved, float(np.abs(new_incr - incr[j]).max()))
            incr[j] = new_incr
            y = y_new
        # the iterate can stall while the corrections still move
        moved = max(moved, float(np.abs(y - y_start).max()))
        if moved <= tol and p.violation(y) <= 10 * tol:
            return ProjectionResult(point=y, active_rows=(), iterations=it, residual=p.violation(y))
    raise ProjectionError(f"Dykstra did not converge in {max_iter} sweeps", point=y, residual=p.violation(y))


def enumerate_project(p: QoSPolytope, x) -> np.ndarray:
    """Brute-force projection: best feasible point over all candidate active sets.

    For every set of linearly independent finite rows the equality
    constrained projection is computed; the closest feasible one is the
    projection.  Exponential, for tiny horizons only.
    """
    x = np.asarray(x, dtype=float)
    rows = [j for j in range(p.A.shape[0]) if np.isfinite(p.b[j])]
    best, best_d = None, math.inf
    for size in range(0, p.dim + 1):
        for S in itertools.combinations(rows, size):
            As = p.A[list(S)]
            if size and np.linalg.matrix_rank(As) < size:
                continue
            if size:
                lam = np.linalg.solve(As @ As.T, As @ x - p.b[list(S)])
                y = x - As.T @ lam
            else:
                y = x
            if p.violation(y) <= 1e-10:
                d = float(np.sum((y - x) ** 2))
                if d < best_d:
                    best, best_d = y, d
    if best is None:
        raise InfeasiblePolytopeError("no feasible candidate")
    return best
