"""Centralised optimum of the tick problem and numeric certificates of the stability theory.

The tick problem is ``min 1/2 z'Hz - u'z`` over the product of per-load
polytopes.  Because ``H`` couples loads only through the per-slot
aggregate, the fast solver dualises the aggregate ``y = sum_i z^i``:

    g(mu) = sum_i min_{z in D^i} [1/2 z'W_i z - (c_i - mu)'z] - 1/2 ||ubar + mu||^2

with ``u^i = c_i + ubar``.  ``g`` is concave and piecewise quadratic, its
gradient is ``F(mu) = sum_i z^i(mu) - ubar - mu``, and a semi-smooth Newton
iteration on ``F = 0`` converges in a handful of steps.  Each step costs
one small diagonal QP per load.

A loose interior-point solve of the same problem (Clarabel) identifies the
active sets and the multiplier up front, so the exact Newton polish usually
needs a single step.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .gradient import HessianOperator, contraction_factor, input_vector, shift
from .model import ReferenceWindow
from .qos import FEAS_TOL, InfeasiblePolytopeError, ProjectionError, QoSPolytope, project, solve_qp_diag

__all__ = [
    "OptimalSolution",
    "ISSEnvelope",
    "OracleTracker",
    "solve_optimal",
    "projected_gradient_solve",
    "enumerate_qp",
    "fixed_point_residual",
    "qp_sensitivity_bound",
    "shifted_optimal_gap",
    "iss_monitor",
    "zero_feasible",
    "IPMWarmStart",
]

ORACLE_TOL = 1e-10
ORACLE_MAX_ITER = 1_000_000


@dataclass
class OptimalSolution:
    z_star: np.ndarray
    eta_star: float  # 1/2 z'Hz - u'z, without the data-only constant
    kkt_residual: float  # aggregate consistency for the dual solver, step length for projected gradient
    iterations: int
    multiplier: np.ndarray | None = None
    method: str = "dual-newton"


def _quad_value(H: HessianOperator, z, u) -> float:
    return float(0.5 * np.sum(z * H.matvec(z)) - np.sum(u * z))


def _project_all(polys: Sequence[QoSPolytope], pts: np.ndarray) -> np.ndarray:
    return np.array([project(p, x).point for p, x in zip(polys, pts)])


def fixed_point_residual(sol, alpha: float, H: HessianOperator, u, polys: Sequence[QoSPolytope]) -> float:
    """``||z* - Proj_D(z* - alpha grad eta(z*))||`` (no shift)."""
    z = sol.z_star if isinstance(sol, OptimalSolution) else np.asarray(sol, dtype=float)
    if alpha == 0:
        return float(np.linalg.norm(z - _project_all(polys, z)))
    g = H.matvec(z) - u
    return float(np.linalg.norm(z - _project_all(polys, z - alpha * g)))


class _LoadResponse:
    """Per-load minimiser ``z^i(mu)`` and its generalised Jacobian."""

    def __init__(self, w, c, poly: QoSPolytope):
        self.w = w
        self.winv = 1.0 / w
        self.c = c
        self.poly = poly
        fin = np.isfinite(poly.b)
        self.A = poly.A[fin]
        self.b = poly.b[fin]
        self.rows = np.flatnonzero(fin)
        self.active = None
        self._memo = {}

    def _affine(self, idx: tuple):
        # for a fixed active set z(mu) = z0 - K mu and lambda(mu) = l0 - L mu
        if idx in self._memo:
            hit = self._memo[idx]
            if hit is None:
                raise np.linalg.LinAlgError("dependent active rows")
            return hit
        wc = self.winv * self.c
        if idx:
            As = self.A[list(idx)]
            WA = self.winv[:, None] * As.T
            G = As @ WA
            if len(idx) > self.w.size or np.linalg.cond(G) > 1e12:
                self._memo[idx] = None
                raise np.linalg.LinAlgError("dependent active rows")
            L = np.linalg.solve(G, WA.T)
            l0 = np.linalg.solve(G, As @ wc - self.b[list(idx)])
            out = (np.diag(self.winv) - WA @ L, wc - WA @ l0, L, l0)
        else:
            out = (np.diag(self.winv), wc, np.zeros((0, self.w.size)), np.zeros(0))
        self._memo[idx] = out
        return out

    def _set_active(self, idx: tuple):
        self.idx = idx
        self.active = tuple(int(self.rows[j]) for j in idx)
        self.K, self.z0, self.L, self.l0 = self._affine(idx)

    def _kkt(self, idx, mu):
        K, z0, L, l0 = self._affine(idx)
        z = z0 - K @ mu
        lam = l0 - L @ mu
        scale = 1e-12 * (1.0 + np.abs(z).max())
        slack = self.A @ z - self.b
        return z, lam, slack, scale

    def solve(self, mu):
        # primal-dual active-set repair from the cached set; Goldfarb-Idnani if it fails
        if self.active is not None:
            idx = self.idx
            try:
                for _ in range(12):
                    z, lam, slack, scale = self._kkt(idx, mu)
                    keep = {j for j, l in zip(idx, lam) if l >= -scale}
                    order = [int(j) for j in np.argsort(-slack) if slack[j] > scale and j not in idx]
                    if len(keep) == len(idx) and not order:
                        self._set_active(idx)
                        return z, self.active
                    for j in order or [None]:
                        cand = tuple(sorted(keep | ({j} if j is not None else set())))
                        try:
                            self._affine(cand)
                            break
                        except np.linalg.LinAlgError:
                            continue
                    else:
                        break
                    idx = cand
            except np.linalg.LinAlgError:
                pass
        res = solve_qp_diag(self.w, self.c - mu, self.poly.A, self.poly.b)
        self._set_active(tuple(int(np.searchsorted(self.rows, r)) for r in res.active_rows))
        return res.point, self.active

    def jacobian(self, active) -> np.ndarray:
        if active != self.active:
            self._set_active(tuple(int(np.searchsorted(self.rows, r)) for r in active))
        return self.K


def _dual_eval(loads, mu, ubar):
    zs, acts = [], []
    val = -0.5 * float(np.sum((ubar + mu) ** 2))
    for ld in loads:
        z, act = ld.solve(mu)
        zs.append(z)
        acts.append(act)
        val += float(0.5 * np.sum(ld.w * z * z) - (ld.c - mu) @ z)
    zs = np.array(zs)
    F = zs.sum(axis=0) - ubar - mu
    return val, zs, acts, F


class IPMWarmStart:
    """Interior-point estimate of the multiplier and per-load active sets.

    Solves the lifted problem over ``(z, y)`` with ``y = sum_i z^i``, whose
    Hessian is diagonal.  Only the rough solution is used; exactness comes
    from the Newton polish.
    """

    def __init__(self, H: HessianOperator, polys: Sequence[QoSPolytope], active_tol: float = 1e-6):
        import clarabel

        self._clarabel = clarabel
        self.H = H
        self.polys = list(polys)
        self.active_tol = active_tol
        N, m = H.n_loads, H.n_p + 1
        self.P = sp.diags(np.concatenate([H.weights.ravel(), np.ones(m)])).tocsc()
        blocks = [sp.csr_matrix(p.A[np.isfinite(p.b)]) for p in self.polys]
        A_ineq = sp.hstack([sp.block_diag(blocks, format="csr"), sp.csr_matrix((sum(b.shape[0] for b in blocks), m))])
        A_eq = sp.hstack([sp.kron(np.ones((1, N)), sp.eye(m)), -sp.eye(m)])
        self.A = sp.vstack([A_eq, A_ineq]).tocsc()
        self.b = np.concatenate([np.zeros(m)] + [p.b[np.isfinite(p.b)] for p in self.polys])
        self.cones = [clarabel.ZeroConeT(m), clarabel.NonnegativeConeT(A_ineq.shape[0])]
        st = clarabel.DefaultSettings()
        st.verbose = False
        self.settings = st

    def __call__(self, u):
        N, m = self.H.n_loads, self.H.n_p + 1
        q = np.concatenate([-np.asarray(u, dtype=float).ravel(), np.zeros(m)])
        sol = self._clarabel.DefaultSolver(self.P, q, self.A, self.b, self.cones, self.settings).solve()
        if str(sol.status) not in ("Solved", "AlmostSolved"):
            return None, None
        z = np.asarray(sol.x[: N * m]).reshape(N, m)
        active = []
        for i, p in enumerate(self.polys):
            slack = p.b - p.A @ z[i]
            active.append(tuple(int(r) for r in np.flatnonzero(np.isfinite(p.b) & (slack < self.active_tol))))
        return z.sum(axis=0) - np.asarray(u).reshape(N, m).mean(axis=0), active


def _default_warm(H, polys):
    try:
        return IPMWarmStart(H, polys)
    except ImportError:  # pragma: no cover - clarabel is a declared dependency
        return None


def solve_optimal(
    H: HessianOperator,
    u,
    polys: Sequence[QoSPolytope],
    tol: float = ORACLE_TOL,
    mu0=None,
    max_newton: int = 20_000,
    fallback: bool = True,
    warm=True,
) -> OptimalSolution:
    """Exact minimiser of ``1/2 z'Hz - u'z`` over ``D = D^1 x ... x D^N``.

    ``tol`` bounds the aggregate consistency ``||F(mu)||_inf``; every
    per-load block is exactly optimal for its multiplier, so the result is
    feasible to machine precision.  ``mu0`` warm-starts the multiplier;
    otherwise ``warm`` (``True``, ``False`` or a reusable
    :class:`IPMWarmStart`) supplies multiplier and active sets.  If Newton
    stalls, projected gradient from the last iterate takes over.
    """
    u = np.asarray(u, dtype=float).reshape(H.n_loads, H.n_p + 1)
    if len(polys) != H.n_loads:
        raise ValueError("one polytope per load required")
    ubar = u.mean(axis=0)
    W = H.weights
    loads = [_LoadResponse(W[i], u[i] - ubar, p) for i, p in enumerate(polys)]
    if mu0 is None and warm is not False:
        if warm is True:
            warm = _default_warm(H, polys)
        if warm is not None:
            mu0, active0 = warm(u)
            if active0 is not None:
                for ld, act in zip(loads, active0):
                    try:
                        ld._set_active(tuple(int(np.searchsorted(ld.rows, r)) for r in act))
                    except np.linalg.LinAlgError:
                        pass
    mu = np.zeros(H.n_p + 1) if mu0 is None else np.array(mu0, dtype=float)
    try:
        val, zs, acts, F = _dual_eval(loads, mu, ubar)
    except InfeasiblePolytopeError as exc:
        raise InfeasiblePolytopeError(f"empty polytope: {exc}") from exc
    # -g has Hessian between I and I + sum_i W_i^{-1}: a 1/L gradient step always ascends
    L = 1.0 + float((1.0 / W).max(axis=1).sum())
    it = 0
    while np.abs(F).max() > tol and it < max_newton:
        it += 1
        J = np.eye(H.n_p + 1)
        for ld, act in zip(loads, acts):
            J += ld.jacobian(act)
        d = np.linalg.solve(J, F)
        slope = float(F @ d)
        res = np.abs(F).max()
        step, accepted = 1.0, False
        for _ in range(4):
            cand = mu + step * d
            v2, z2, a2, F2 = _dual_eval(loads, cand, ubar)
            if v2 >= val + 1e-4 * step * slope or np.abs(F2).max() <= 0.9 * res:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # Newton is cycling across kinks of the piecewise-affine F
            cand = mu + F / L
            v2, z2, a2, F2 = _dual_eval(loads, cand, ubar)
        mu, val, zs, acts, F = cand, v2, z2, a2, F2
    z = zs
    if np.abs(F).max() > tol:
        if not fallback:
            raise ProjectionError(
                f"dual Newton stopped with aggregate residual {np.abs(F).max():.3e}", point=z, residual=float(np.abs(F).max())
            )
        sol = projected_gradient_solve(H, u, polys, tol=tol, z0=z)
        sol.iterations += it
        sol.method = "dual-newton+pg"
        return sol
    return OptimalSolution(z, _quad_value(H, z, u), float(np.abs(F).max()), it, mu)


def projected_gradient_solve(
    H: HessianOperator,
    u,
    polys: Sequence[QoSPolytope],
    tol: float = ORACLE_TOL,
    max_iter: int = ORACLE_MAX_ITER,
    z0=None,
) -> OptimalSolution:
    """Projected gradient with step ``1/lambda_max`` until the fixed-point residual is below ``tol``.

    Slow on ill-conditioned fleets; kept as the textbook reference solver.
    """
    u = np.asarray(u, dtype=float).reshape(H.n_loads, H.n_p + 1)
    step = 1.0 / H.lambda_max
    z = _project_all(polys, np.zeros_like(u) if z0 is None else np.asarray(z0, dtype=float))
    for it in range(1, max_iter + 1):
        z_new = _project_all(polys, z - step * (H.matvec(z) - u))
        res = float(np.linalg.norm(z_new - z))
        z = z_new
        if res <= tol:
            return OptimalSolution(z, _quad_value(H, z, u), res, it, None, "projected-gradient")
    raise ProjectionError(f"projected gradient hit {max_iter} iterations", point=z, residual=res)


def enumerate_qp(H: HessianOperator, u, polys: Sequence[QoSPolytope]) -> np.ndarray:
    """Brute-force minimiser: best feasible equality-constrained stationary point over all row subsets.

    Exponential; dimension ``N (n_p + 1) <= 6`` only.
    """
    Hd = H.dense()
    u = np.asarray(u, dtype=float).ravel()
    n = Hd.shape[0]
    m = H.n_p + 1
    blocks_A, blocks_b = [], []
    for i, p in enumerate(polys):
        fin = np.isfinite(p.b)
        A = np.zeros((int(fin.sum()), n))
        A[:, i * m : (i + 1) * m] = p.A[fin]
        blocks_A.append(A)
        blocks_b.append(p.b[fin])
    A = np.vstack(blocks_A)
    b = np.concatenate(blocks_b)

    def feasible(z):
        return bool(np.all(A @ z - b <= 1e-9))

    best, best_val = None, math.inf
    for size in range(0, n + 1):
        for S in itertools.combinations(range(A.shape[0]), size):
            S = list(S)
            As = A[S]
            if size and np.linalg.matrix_rank(As) < size:
                continue
            K = np.block([[Hd, As.T], [As, np.zeros((size, size))]])
            rhs = np.concatenate([u, b[S]])
            z = np.linalg.solve(K, rhs)[:n]
            if feasible(z):
                val = 0.5 * z @ Hd @ z - u @ z
                if val < best_val:
                    best, best_val = z, val
    if best is None:
        raise InfeasiblePolytopeError("no feasible KKT candidate")
    return best.reshape(H.n_loads, m)


def qp_sensitivity_bound(H: HessianOperator, u_a, u_b, z_a, z_b, rel: float = 1e-6):
    """``(1/N)||z_a - z_b||`` against ``||u_a - u_b|| / lambda_min``."""
    lhs = float(np.linalg.norm(np.asarray(z_a) - np.asarray(z_b))) / H.n_loads
    rhs = float(np.linalg.norm(np.asarray(u_a) - np.asarray(u_b))) / H.lambda_min
    return lhs, rhs, lhs <= rhs * (1 + rel) + 1e-12


def zero_feasible(polys: Sequence[QoSPolytope], tol: float = FEAS_TOL) -> bool:
    return all(p.contains(np.zeros(p.dim), tol) for p in polys)


def shifted_optimal_gap(H: HessianOperator, z_prev_star, z_star, u_prev, u_now, zero_ok: bool = True, rel: float = 1e-6):
    """Distance between the shifted previous optimum and the current one.

    Returns ``(lhs, rhs, holds)`` with ``rhs = g_bar / lambda_min`` where
    ``g_bar = ||u_now - u_prev|| + 2 ||u_prev||``; the zero input is the one
    whose optimum is the all-zero trajectory.  When zero is infeasible the
    bound cannot be evaluated and ``(lhs, nan, None)`` is returned.
    """
    lhs = float(np.linalg.norm(shift(z_prev_star) - np.asarray(z_star))) / H.n_loads
    if not zero_ok:
        return lhs, math.nan, None
    u_prev = np.asarray(u_prev, dtype=float)
    g_bar = float(np.linalg.norm(np.asarray(u_now) - u_prev) + 2.0 * np.linalg.norm(u_prev))
    rhs = g_bar / H.lambda_min
    return lhs, rhs, lhs <= rhs * (1 + rel) + 1e-12


@dataclass
class ISSEnvelope:
    M_alpha: float
    u_bar: float
    g_bar: float
    delta: float
    gaps: np.ndarray
    bound_series: np.ndarray
    first_violation: int | None = None

    @property
    def margins(self) -> np.ndarray:
        return self.bound_series - self.gaps

    @property
    def ok(self) -> bool:
        return self.first_violation is None


def iss_monitor(z_traj, z_star_traj, H: HessianOperator, alpha: float, u_traj, u_star_traj) -> ISSEnvelope:
    """Check ``||z_t - z*_t|| <= M^t ||z_0 - z*_0|| + alpha u_bar / (1 - M)`` on a run.

    ``u_bar = N g_bar / (alpha lambda_min) + Delta`` with ``g_bar`` the
    largest shifted-optimum input over the run and ``Delta`` the largest
    ``||P u_{t-1} - u*_t||``.  Both are measured, not assumed.
    """
    M = contraction_factor(H, alpha)
    if not M < 1:
        raise ValueError(f"contraction factor {M} >= 1; step size inadmissible")
    T = len(z_traj)
    gaps = np.array([np.linalg.norm(np.asarray(z_traj[t]) - np.asarray(z_star_traj[t])) for t in range(T)])
    g_bar, delta = 0.0, 0.0
    for t in range(1, T):
        us_prev, us = np.asarray(u_star_traj[t - 1]), np.asarray(u_star_traj[t])
        g_bar = max(g_bar, float(np.linalg.norm(us - us_prev) + 2 * np.linalg.norm(us_prev)))
        delta = max(delta, float(np.linalg.norm(shift(np.asarray(u_traj[t - 1])) - us)))
    u_bar = H.n_loads * g_bar / (alpha * H.lambda_min) + delta
    steady = alpha * u_bar / (1 - M)
    bound = (M ** np.arange(T)) * (gaps[0] if T else 0.0) + steady
    bad = np.flatnonzero(gaps > bound * (1 + 1e-9))
    return ISSEnvelope(M, u_bar, g_bar, delta, gaps, bound, int(bad[0]) if bad.size else None)


class OracleTracker:
    """Solves the tick problem alongside a primal run and certifies the theory afterwards.

    The oracle keeps its own consumed history: its memory anchor at tick
    ``t`` is slot 1 of its previous optimum.
    """

    def __init__(self, polys: Sequence[QoSPolytope], H: HessianOperator, alpha: float, tol: float = ORACLE_TOL):
        self.polys = list(polys)
        self.H = H
        self.alpha = alpha
        self.tol = tol
        self.zero_ok = zero_feasible(self.polys)
        self.z, self.z_star, self.u, self.u_star, self.fp_residual = [], [], [], [], []
        self._prev_star = None
        self._warm = _default_warm(H, self.polys)

    def observe(self, ref: ReferenceWindow, z, prev_consumed) -> float:
        if self._prev_star is None:
            self._prev_star = np.asarray(prev_consumed, dtype=float).copy()
        u_star = input_vector(self._prev_star, ref, self.H.zeta_bars)
        sol = solve_optimal(self.H, u_star, self.polys, tol=self.tol, warm=self._warm if self._warm else False)
        self._prev_star = sol.z_star[:, 1].copy()
        self.z.append(np.asarray(z, dtype=float).copy())
        self.z_star.append(sol.z_star)
        self.u.append(input_vector(prev_consumed, ref, self.H.zeta_bars))
        self.u_star.append(u_star)
        self.fp_residual.append(fixed_point_residual(sol, self.alpha, self.H, u_star, self.polys))
        return float(np.linalg.norm(self.z[-1] - sol.z_star))

    def sensitivity(self):
        """Sensitivity bound on consecutive oracle pairs."""
        return [
            qp_sensitivity_bound(self.H, self.u_star[t - 1], self.u_star[t], self.z_star[t - 1], self.z_star[t])
            for t in range(1, len(self.z_star))
        ]

    def shifted_gap(self):
        return [
            shifted_optimal_gap(
                self.H, self.z_star[t - 1], self.z_star[t], self.u_star[t - 1], self.u_star[t], self.zero_ok
            )
            for t in range(1, len(self.z_star))
        ]

    def iss(self) -> ISSEnvelope:
        return iss_monitor(self.z, self.z_star, self.H, self.alpha, self.u, self.u_star)

    def report(self, fp_tol: float = 1e-8) -> dict:
        l1 = self.sensitivity()
        l2 = self.shifted_gap()
        iss = self.iss() if self.z else None
        fp = np.array(self.fp_residual)
        l2_eval = [r for r in l2 if r[2] is not None]
        rep = {
            "ticks": len(self.z),
            "constants": {
                "alpha": self.alpha,
                "lambda_min": self.H.lambda_min,
                "lambda_max": self.H.lambda_max,
                "M_alpha": contraction_factor(self.H, self.alpha),
                "u_bar": iss.u_bar if iss else None,
                "g_bar": iss.g_bar if iss else None,
                "delta": iss.delta if iss else None,
            },
            "fixed_point": {
                "pass": bool(fp.size == 0 or fp.max() <= fp_tol),
                "worst_residual": float(fp.max(initial=0.0)),
                "tol": fp_tol,
            },
            "sensitivity": {
                "pass": all(r[2] for r in l1),
                "violations": sum(1 for r in l1 if not r[2]),
                "worst_ratio": max((r[0] / r[1] for r in l1 if r[1] > 0), default=0.0),
            },
            "shifted_gap": {
                "pass": all(r[2] for r in l2_eval),
                "evaluated": bool(self.zero_ok),
                "violations": sum(1 for r in l2_eval if not r[2]),
                "worst_ratio": max((r[0] / r[1] for r in l2_eval if r[1] > 0), default=0.0),
            },
            "iss": {
                "pass": bool(iss.ok) if iss else True,
                "first_violation": iss.first_violation if iss else None,
                "worst_margin": float(iss.margins.min()) if iss else None,
                "worst_ratio": float((iss.gaps / iss.bound_series).max()) if iss else None,
            },
        }
        rep["pass"] = all(rep[k]["pass"] for k in ("fixed_point", "sensitivity", "shifted_gap", "iss"))
        return rep


def dump_report(rep: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
        fh.write("\n")
