"""Constant Hessian, input vector, gradients, the horizon shift and step sizes.

The objective of the tick-``t`` problem is, per trajectory slot ``k``,

    eta(z) = 1/2 * sum_k [ sum_i w^i_k (z^i[k] - a^i_k)^2 + (sum_i z^i[k] - sref_k)^2 ]

with weights ``w^i_0 = zeta_bar^i`` (anchor ``a^i_0 = d^i_{t-1|t-1}``),
``w^i_k = zeta^i`` for ``k >= 1`` (anchor 0) and ``sref = [s_{t-1}, s_t, ...]``.
Its Hessian couples loads only through the per-slot aggregate:

    H = (1 1^T) kron I_{n_p+1} + blockdiag_i diag(zeta_bar^i, zeta^i, ..., zeta^i)

so every slot is an independent ``N x N`` "diagonal plus all-ones" block.
``grad eta(z) = H z - u`` with ``u^i = [zeta_bar^i d^i_{t-1|t-1} + s_{t-1}, s_t, ...]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .model import LoadQoS, ReferenceWindow

__all__ = [
    "HessianOperator",
    "assemble_hessian",
    "input_vector",
    "objective",
    "gradient",
    "aggregate_error",
    "local_gradient",
    "ensemble_local_gradients",
    "shift",
    "shift_matrix",
    "step_size_bound",
    "contraction_factor",
    "commutator_norm",
]

DENSE_CAP = 2000


@dataclass(frozen=True, eq=False)
class HessianOperator:
    """Matrix-free form of the constant Hessian."""

    zetas: np.ndarray
    zeta_bars: np.ndarray
    n_p: int

    @property
    def n_loads(self) -> int:
        return self.zetas.size

    @property
    def dim(self) -> int:
        return self.n_loads * (self.n_p + 1)

    @cached_property
    def weights(self) -> np.ndarray:
        """``(N, n_p + 1)`` block-diagonal weights, memory slot first."""
        w = np.repeat(self.zetas[:, None], self.n_p + 1, axis=1)
        w[:, 0] = self.zeta_bars
        return w

    def matvec(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        flat = z.ndim == 1
        z2 = z.reshape(self.n_loads, self.n_p + 1)
        out = self.weights * z2 + z2.sum(axis=0)
        return out.ravel() if flat else out

    __matmul__ = matvec

    def dense(self) -> np.ndarray:
        if self.dim > DENSE_CAP:
            raise ValueError(f"dense materialisation capped at dimension {DENSE_CAP}")
        coupling = np.kron(np.ones((self.n_loads, self.n_loads)), np.eye(self.n_p + 1))
        return coupling + np.diag(self.weights.ravel())

    def _slot_eigs(self, w: np.ndarray) -> np.ndarray:
        return np.linalg.eigvalsh(np.diag(w) + 1.0)

    @cached_property
    def slot_spectra(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues of the memory-slot block and of each forward-slot block."""
        if self.n_loads > DENSE_CAP:
            raise ValueError("slot eigensolve capped; use extreme_eigenvalues()")
        return self._slot_eigs(self.zeta_bars), self._slot_eigs(self.zetas)

    def eigenvalues(self) -> np.ndarray:
        """Full spectrum (sorted), assembled from the per-slot blocks."""
        mem, fwd = self.slot_spectra
        return np.sort(np.concatenate([mem] + [fwd] * self.n_p))

    @cached_property
    def extreme_eigenvalues(self) -> tuple[float, float]:
        """``(lambda_min, lambda_max)`` of the Hessian."""
        if self.n_loads <= DENSE_CAP:
            mem, fwd = self.slot_spectra
            return float(min(mem[0], fwd[0])), float(max(mem[-1], fwd[-1]))
        lmax = _power_iteration(self)
        # Weyl: adding the PSD coupling cannot push eigenvalues below the weights
        return float(self.weights.min()), lmax

    @property
    def lambda_min(self) -> float:
        return self.extreme_eigenvalues[0]

    @property
    def lambda_max(self) -> float:
        return self.extreme_eigenvalues[1]

    def solve(self, rhs) -> np.ndarray:
        """``H^{-1} rhs`` using the slot-block structure (Sherman-Morrison per slot)."""
        r = np.asarray(rhs, dtype=float).reshape(self.n_loads, self.n_p + 1)
        w = self.weights
        y = r / w
        corr = y.sum(axis=0) / (1.0 + (1.0 / w).sum(axis=0))
        return y - corr / w


def _power_iteration(H: HessianOperator, tol: float = 1e-8, max_iter: int = 100_000) -> float:
    rng = np.random.default_rng(0)
    v = rng.standard_normal(H.dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = H.matvec(v)
        lam_new = float(v @ w)
        v = w / np.linalg.norm(w)
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return lam


def assemble_hessian(fleet: Sequence[LoadQoS], n_p: int) -> HessianOperator:
    if not fleet:
        raise ValueError("empty fleet")
    if n_p < 1:
        raise ValueError("horizon must be >= 1")
    zetas = np.array([q.zeta for q in fleet], dtype=float)
    zbars = np.array([q.zeta_bar for q in fleet], dtype=float)
    zetas.setflags(write=False)
    zbars.setflags(write=False)
    return HessianOperator(zetas, zbars, n_p)


def input_vector(prev_consumed, ref: ReferenceWindow, zeta_bars) -> np.ndarray:
    """The ``(N, n_p + 1)`` array ``u`` with ``grad eta(z) = H z - u``."""
    prev = np.asarray(prev_consumed, dtype=float)
    zb = np.asarray(zeta_bars, dtype=float)
    if prev.shape != zb.shape:
        raise ValueError("prev_consumed and weights must have one entry per load")
    u = np.empty((prev.size, ref.n_p + 1))
    u[:, 0] = zb * prev + ref.s_prev
    u[:, 1:] = ref.s_future
    return u


def objective(z, prev_consumed, ref: ReferenceWindow, zetas, zeta_bars) -> float:
    """Literal tick objective: memory term plus regularised tracking over the horizon."""
    z = np.asarray(z, dtype=float)
    zetas = np.asarray(zetas, dtype=float)
    zeta_bars = np.asarray(zeta_bars, dtype=float)
    prev = np.asarray(prev_consumed, dtype=float)
    mem = np.sum(zeta_bars * (z[:, 0] - prev) ** 2) + (z[:, 0].sum() - ref.s_prev) ** 2
    track = 0.0
    for k in range(ref.n_p):
        col = z[:, k + 1]
        track += np.sum(zetas * col**2) + (col.sum() - ref.s_future[k]) ** 2
    return 0.5 * float(mem + track)


def gradient(H: HessianOperator, z, u) -> np.ndarray:
    """``H z - u`` in ``(N, n_p + 1)`` layout."""
    z = np.asarray(z, dtype=float).reshape(H.n_loads, H.n_p + 1)
    return H.matvec(z) - u


def aggregate_error(z, ref: ReferenceWindow) -> np.ndarray:
    """Per-slot aggregate tracking error ``sum_i z^i[k] - sref_k`` (the coordinator broadcast).

    Slot 1 is the current tracking error ``e_{t|t}``.
    """
    z = np.asarray(z, dtype=float)
    # np.sum over axis 0 uses a fixed pairwise order: reproducible bit-for-bit
    return z.sum(axis=0) - ref.stacked()


def local_gradient(traj, agg_err, q: LoadQoS, prev_i: float) -> np.ndarray:
    """Gradient block of one load, computed from its own data and the broadcast."""
    traj = np.asarray(traj, dtype=float)
    g = q.zeta * traj + agg_err
    g[0] = q.zeta_bar * (traj[0] - prev_i) + agg_err[0]
    return g


def ensemble_local_gradients(H: HessianOperator, z, agg_err, prev_consumed) -> np.ndarray:
    """All load-local gradient blocks at once (vectorised :func:`local_gradient`)."""
    z = np.asarray(z, dtype=float)
    anchored = z.copy()
    anchored[:, 0] -= prev_consumed
    return H.weights * anchored + agg_err


def shift(x) -> np.ndarray:
    """Cyclic horizon shift: slot ``k + 1`` moves to ``k`` and slot 0 wraps to the end.

    Acts along the last axis, so it applies per load to an ensemble array.
    """
    return np.roll(np.asarray(x, dtype=float), -1, axis=-1)


def shift_matrix(n_p: int, n_loads: int = 1) -> np.ndarray:
    """Dense permutation matrix of :func:`shift` (``I_N kron P_hat``)."""
    n = n_p + 1
    P_hat = np.zeros((n, n))
    P_hat[np.arange(n_p), np.arange(1, n)] = 1.0
    P_hat[n_p, 0] = 1.0
    return np.kron(np.eye(n_loads), P_hat)


def step_size_bound(fleet: Sequence[LoadQoS], n_p: int = 1) -> tuple[float, float]:
    """``(1 / (zeta_max + N), 1 / lambda_max)``.

    The first value comes from Gershgorin discs (row sums of ``H``); the
    second is the exact limit of the sufficient condition
    ``alpha * lambda_max < 1``.  ``zeta_max`` also covers the memory weights.
    """
    H = assemble_hessian(fleet, n_p)
    zmax = float(max(H.zetas.max(), H.zeta_bars.max()))
    return 1.0 / (zmax + H.n_loads), 1.0 / H.lambda_max


def contraction_factor(H: HessianOperator, alpha: float) -> float:
    """``M(alpha) = ||I - alpha H||`` (spectral norm; ``H`` is symmetric)."""
    lmin, lmax = H.extreme_eigenvalues
    return max(abs(1.0 - alpha * lmin), abs(1.0 - alpha * lmax))


def commutator_norm(H: HessianOperator) -> float:
    """Spectral norm of ``P H - H P`` with ``P`` the ensemble shift."""
    Hd = H.dense()
    P = shift_matrix(H.n_p, H.n_loads)
    return float(np.linalg.norm(P @ Hd - Hd @ P, 2))
