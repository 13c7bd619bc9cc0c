"""Time evolution: exact Liouvillian propagation, bare non-Hermitian propagation,
and the first-order gain (backflow) coefficient of the Dyson expansion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DomainError, NumericError
from .liouvillian import BlockSet, LiouvillianMatrix, VectorizedDensity, vectorize

Method = Literal["exact", "nonhermitian", "dyson1"]


@dataclass(frozen=True)
class PropagationResult:
    times: np.ndarray
    states: list  # VectorizedDensity (exact) or density matrices (nonhermitian)
    method: Method

    def traces(self) -> np.ndarray:
        if self.method == "exact":
            return np.array([s.trace() for s in self.states])
        return np.array([np.trace(s) for s in self.states])

    def overlaps(self, rho0) -> np.ndarray:
        """tr(rho0^dag rho(t)) for each stored time."""
        if self.method == "exact":
            ref = rho0 if isinstance(rho0, VectorizedDensity) else vectorize(rho0)
            return np.array([ref.inner(s) for s in self.states])
        r0 = rho0.matrix() if isinstance(rho0, VectorizedDensity) else np.asarray(rho0)
        return np.array([np.vdot(r0, s) for s in self.states])


def check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float).ravel()
    if t.size == 0:
        raise DomainError("time grid is empty")
    if t[0] != 0.0:
        raise DomainError("time grid must start at 0")
    if np.any(np.diff(t) <= 0):
        raise DomainError("time grid must be strictly increasing")
    return t


def is_uniform(t: np.ndarray, rtol: float = 1e-9) -> bool:
    if t.size < 3:
        return True
    d = np.diff(t)
    return bool(np.all(np.abs(d - d[0]) <= rtol * max(abs(d[0]), 1e-300) + 1e-14))


def propagate_vectors(generator: np.ndarray, v0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Rows are exp(generator * t_i) @ v0.

    Uniform grids reuse one step propagator; otherwise each time gets its own
    exponential.
    """
    out = np.empty((times.size, v0.size), dtype=complex)
    if is_uniform(times):
        step = sla.expm(generator * (times[1] - times[0])) if times.size > 1 else None
        v = v0.astype(complex)
        out[0] = v
        for i in range(1, times.size):
            v = step @ v
            if not np.all(np.isfinite(v)):
                raise NumericError(f"propagation overflowed at t={times[i]:.6g}")
            out[i] = v
    else:
        for i, t in enumerate(times):
            out[i] = sla.expm(generator * t) @ v0
            if not np.all(np.isfinite(out[i])):
                raise NumericError(f"propagation overflowed at t={t:.6g}")
    return out


def evolve_exact(L: LiouvillianMatrix, rho0, times) -> PropagationResult:
    t = check_times(times)
    vec0 = rho0 if isinstance(rho0, VectorizedDensity) else vectorize(rho0)
    sub = L.restrict_vector(vec0)
    rows = propagate_vectors(L.matrix, sub, t)
    return PropagationResult(t, [L.embed_vector(r) for r in rows], "exact")


def exact_overlaps(L: LiouvillianMatrix, rho0, times) -> np.ndarray:
    """<<rho0| e^{L t} |rho0>> without materialising full-space states."""
    t = check_times(times)
    vec0 = rho0 if isinstance(rho0, VectorizedDensity) else vectorize(rho0)
    sub = L.restrict_vector(vec0)
    return propagate_vectors(L.matrix, sub, t) @ sub.conj()


def evolve_nonhermitian(heff: np.ndarray, rho0: np.ndarray, times, normalize: bool = False) -> PropagationResult:
    """States exp(-i Heff t) rho0 exp(i Heff^dag t); unnormalised unless asked."""
    t = check_times(times)
    heff = np.asarray(heff, dtype=complex)
    rho0 = np.asarray(rho0, dtype=complex)
    if heff.shape != rho0.shape:
        raise DomainError(f"Heff {heff.shape} and rho0 {rho0.shape} differ in shape")
    states = []
    if is_uniform(t):
        step = sla.expm(-1j * heff * (t[1] - t[0])) if t.size > 1 else None
        U = np.eye(heff.shape[0], dtype=complex)
        for i in range(t.size):
            if i:
                U = step @ U
            states.append(U @ rho0 @ U.conj().T)
    else:
        for ti in t:
            U = sla.expm(-1j * heff * ti)
            states.append(U @ rho0 @ U.conj().T)
    for ti, s in zip(t, states):
        if not np.all(np.isfinite(s)):
            raise NumericError(f"non-Hermitian propagation overflowed at t={ti:.6g}")
    if normalize:
        states = [s / np.trace(s) for s in states]
    return PropagationResult(t, states, "nonhermitian")


def nonhermitian_amplitudes(heff: np.ndarray, psi0: np.ndarray, times) -> np.ndarray:
    """<psi0| exp(-i Heff t) |psi0> on a time grid (pure-state shortcut)."""
    t = check_times(times)
    rows = propagate_vectors(-1j * np.asarray(heff, dtype=complex), np.asarray(psi0, dtype=complex), t)
    return rows @ np.asarray(psi0).conj()


# --- first-order backflow ------------------------------------------------------


def _sector_of(blocks: BlockSet, sub: np.ndarray) -> tuple[int, int]:
    hits = [s for s, idx in blocks.sectors.items() if np.any(np.abs(sub[idx]) > 0)]
    if len(hits) != 1 or hits[0][0] != hits[0][1]:
        raise DomainError(f"initial state must lie in a single (n, n) sector, found {hits}")
    return hits[0]


def _gauss_legendre(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w  # nodes/weights on [0, 1]


def _expm_stack(A: np.ndarray, ts: np.ndarray) -> np.ndarray:
    return sla.expm(A[None, :, :] * ts.reshape(-1, 1, 1))


def _backflow_paths(blocks: BlockSet, sector):
    """Yield (kind, intermediate sector, first jump, return jump)."""
    for (dst, src), down in blocks.Ld.items():
        if src == sector and (sector, dst) in blocks.Lu:
            yield "loss-gain", dst, down, blocks.Lu[(sector, dst)]
    for (dst, src), up in blocks.Lu.items():
        if src == sector and (sector, dst) in blocks.Ld:
            yield "gain-loss", dst, up, blocks.Ld[(sector, dst)]


def _backflow_estimate(blocks: BlockSet, sector, b: np.ndarray, t: float, n: int) -> complex:
    a = b.conj()
    A = blocks.L0[sector]
    x, w = _gauss_legendre(n)
    total = 0.0j
    for kind, mid, first, back in _backflow_paths(blocks, sector):
        B = blocks.L0[mid]
        if kind == "loss-gain":
            # int_0^t dtau int_0^tau dtau1 a.E_n(t-tau) U E_m(tau-tau1) D E_n(tau1) b
            tau = t * x
            outer = _expm_stack(A, t - tau)
            for i, ti in enumerate(tau):
                tau1 = ti * x
                jumped = (_expm_stack(A, tau1) @ b) @ first.T
                inner = np.einsum("qij,qj->qi", _expm_stack(B, ti - tau1), jumped)
                vec = ti * (w @ inner)
                total += w[i] * t * (a @ (outer[i] @ (back @ vec)))
        else:
            # int_0^t dtau int_0^{t-tau} dtau1 a.E_n(t-tau-tau1) D E_m(tau1) U E_n(tau) b
            tau = t * x
            start = _expm_stack(A, tau) @ b
            for i, ti in enumerate(tau):
                span = t - ti
                tau1 = span * x
                lifted = first @ start[i]
                mid_vecs = _expm_stack(B, tau1) @ lifted
                returned = mid_vecs @ back.T
                finals = np.einsum("qij,qj->qi", _expm_stack(A, span - tau1), returned)
                total += w[i] * t * span * (w @ (finals @ a))
    return total


def backflow_first_order(
    blocks: BlockSet,
    rho0,
    t: float,
    *,
    nodes: int = 32,
    rtol: float = 1e-6,
    atol: float = 1e-14,
    max_nodes: int = 512,
    L: Optional[LiouvillianMatrix] = None,
) -> complex:
    """Coefficient of lambda in <<rho0| exp((L0 + Ld + lambda Lu) t) |rho0>>.

    Sums the loss-then-gain and gain-then-loss nested time integrals by
    Gauss-Legendre quadrature on the triangle, doubling the node count until
    the relative change drops below ``rtol``.  Intermediate sectors without a
    matching return block contribute nothing.  ``rho0`` is a vector in the
    index space the blocks were cut from, or a VectorizedDensity together with
    the Liouvillian ``L`` that produced the blocks.
    """
    if t < 0:
        raise DomainError("t must be nonnegative")
    if isinstance(rho0, VectorizedDensity):
        if L is None:
            raise DomainError("pass the Liouvillian to restrict a VectorizedDensity")
        sub = L.restrict_vector(rho0)
    else:
        sub = np.asarray(rho0, dtype=complex)
    sector = _sector_of(blocks, sub)
    if t == 0.0:
        return 0.0j
    b = sub[blocks.sectors[sector]]
    prev = _backflow_estimate(blocks, sector, b, t, nodes)
    n = nodes
    while n < max_nodes:
        n *= 2
        cur = _backflow_estimate(blocks, sector, b, t, n)
        if abs(cur - prev) <= rtol * abs(cur) + atol:
            return complex(cur)
        prev = cur
    raise NumericError(f"backflow quadrature did not converge at t={t} with {max_nodes} nodes")


def backflow_vanishing_check(blocks: BlockSet, sector: Optional[int] = None, atol: float = 1e-12) -> bool:
    """True iff Lu Ld and Lu L0 Ld vanish on every loss-then-gain loop through the sector(s)."""
    sectors = [(sector, sector)] if sector is not None else [s for s in blocks.L0 if s[0] == s[1]]
    for s in sectors:
        for (dst, src), down in blocks.Ld.items():
            if src != s or (s, dst) not in blocks.Lu:
                continue
            up = blocks.Lu[(s, dst)]
            if np.max(np.abs(up @ down), initial=0.0) > atol:
                return False
            if np.max(np.abs(up @ blocks.L0[dst] @ down), initial=0.0) > atol:
                return False
    return True


def first_order_oracle(A: np.ndarray, B: np.ndarray, v: np.ndarray, t: float) -> complex:
    """d/dlambda <v| exp((A + lambda B) t) |v> at lambda = 0 via the block-triangular exponential."""
    n = A.shape[0]
    big = np.zeros((2 * n, 2 * n), dtype=complex)
    big[:n, :n] = A
    big[n:, n:] = A
    big[:n, n:] = B
    E = sla.expm(big * t)
    return complex(v.conj() @ E[:n, n:] @ v)
