"""Liouvillian superoperators in the double Hilbert space.

Density matrices are flattened row-major, ``|i><j| -> |i> (x) |j>`` at index
``i * D + j``, so that vec(A rho B) = (A kron B^T) vec(rho) and the generator
reads ``-i (Heff kron I - I kron Heff^*) + sum_mu L_mu kron L_mu^*``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DomainError, NumericError, UnsupportedModelError
from .fockspace import OccupationBasis

log = logging.getLogger(__name__)

ZERO_EIG_TOL = 1e-9


@dataclass(frozen=True)
class VectorizedDensity:
    dim: int
    data: np.ndarray

    def matrix(self) -> np.ndarray:
        return devectorize(self)

    def trace(self) -> complex:
        return self.data[:: self.dim + 1].sum()

    def inner(self, other: "VectorizedDensity") -> complex:
        """<<self|other>> = tr(self^dag other)."""
        return np.vdot(self.data, other.data)


def vectorize(rho: np.ndarray) -> VectorizedDensity:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DomainError(f"density matrix must be square, got shape {rho.shape}")
    return VectorizedDensity(rho.shape[0], rho.astype(complex).reshape(-1).copy())


def devectorize(vec: VectorizedDensity | np.ndarray, dim: Optional[int] = None) -> np.ndarray:
    if isinstance(vec, VectorizedDensity):
        return vec.data.reshape(vec.dim, vec.dim).copy()
    vec = np.asarray(vec)
    dim = dim or int(round(np.sqrt(vec.size)))
    if dim * dim != vec.size:
        raise DomainError(f"vector of length {vec.size} is not a flattened square matrix")
    return vec.reshape(dim, dim).copy()


def effective_hamiltonian(H: np.ndarray, jumps: Sequence[np.ndarray]) -> np.ndarray:
    heff = np.array(H, dtype=complex)
    for L in jumps:
        heff = heff - 0.5j * (L.conj().T @ L)
    return heff


@dataclass
class LiouvillianMatrix:
    """Dense Liouvillian, optionally restricted to a subset of double-space indices.

    ``support`` lists the positions (into the full D^2 flattening) kept by a
    restriction; ``charge_map`` holds (n_ket, n_bra) for each kept index.
    """

    matrix: np.ndarray
    dim: int
    charge_map: Optional[np.ndarray] = None
    support: Optional[np.ndarray] = None
    heff: Optional[np.ndarray] = None
    _blocks: Optional["BlockSet"] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.dim**2) if self.support is None else self.support

    def restrict_vector(self, vec: VectorizedDensity | np.ndarray) -> np.ndarray:
        data = vec.data if isinstance(vec, VectorizedDensity) else np.asarray(vec)
        if data.size != self.dim**2:
            raise DomainError(f"expected a vector of length {self.dim**2}, got {data.size}")
        return data[self.indices].astype(complex)

    def embed_vector(self, sub: np.ndarray) -> VectorizedDensity:
        full = np.zeros(self.dim**2, dtype=complex)
        full[self.indices] = sub
        return VectorizedDensity(self.dim, full)

    def trace_functional(self) -> np.ndarray:
        """Row vector <<I| expressed in this matrix's index space."""
        diag = np.arange(self.dim) * (self.dim + 1)
        return np.isin(self.indices, diag).astype(complex)

    def sector_labels(self) -> list[tuple[int, int]]:
        self._require_charges()
        return sorted({(int(a), int(b)) for a, b in self.charge_map})

    def _require_charges(self):
        if self.charge_map is None:
            raise UnsupportedModelError(
                "Liouvillian carries no particle-number labels; build it with a basis"
            )


def build_liouvillian(
    H: np.ndarray,
    jumps: Sequence[np.ndarray] = (),
    basis: Optional[OccupationBasis] = None,
) -> LiouvillianMatrix:
    H = np.asarray(H, dtype=complex)
    D = H.shape[0]
    if H.shape != (D, D):
        raise DomainError(f"Hamiltonian must be square, got {H.shape}")
    for mu, L in enumerate(jumps):
        if np.shape(L) != (D, D):
            raise DomainError(f"jump {mu} has shape {np.shape(L)}, expected {(D, D)}")
    if basis is not None and basis.dim != D:
        raise DomainError(f"basis dimension {basis.dim} != Hamiltonian dimension {D}")

    heff = effective_hamiltonian(H, jumps)
    eye = np.eye(D)
    mat = -1j * (np.kron(heff, eye) - np.kron(eye, heff.conj()))
    for L in jumps:
        L = np.asarray(L, dtype=complex)
        mat += np.kron(L, L.conj())

    charge_map = None
    if basis is not None:
        n = basis.particle_numbers()
        charge_map = np.stack([np.repeat(n, D), np.tile(n, D)], axis=1)
    return LiouvillianMatrix(mat, D, charge_map=charge_map, heff=heff)


def restrict_weak_symmetry(L: LiouvillianMatrix, n_diff: int = 0) -> LiouvillianMatrix:
    """Keep the double-space states with n_ket - n_bra == n_diff (an invariant subspace)."""
    L._require_charges()
    keep = np.flatnonzero(L.charge_map[:, 0] - L.charge_map[:, 1] == n_diff)
    if keep.size == 0:
        raise DomainError(f"no double-space states with particle-number difference {n_diff}")
    return LiouvillianMatrix(
        L.matrix[np.ix_(keep, keep)].copy(),
        L.dim,
        charge_map=L.charge_map[keep],
        support=L.indices[keep],
        heff=L.heff,
    )


@dataclass
class BlockSet:
    """Charge-sector blocks of a Liouvillian.

    Sector keys are (n_ket, n_bra) pairs.  ``L0[s]`` acts within sector s;
    ``Ld[(dst, src)]`` and ``Lu[(dst, src)]`` map src to a sector with fewer
    (resp. more) particles.
    """

    sectors: dict[tuple[int, int], np.ndarray]
    L0: dict[tuple[int, int], np.ndarray]
    Ld: dict[tuple[tuple[int, int], tuple[int, int]], np.ndarray]
    Lu: dict[tuple[tuple[int, int], tuple[int, int]], np.ndarray]
    size: int

    def reassemble(self) -> np.ndarray:
        out = np.zeros((self.size, self.size), dtype=complex)
        for s, blk in self.L0.items():
            idx = self.sectors[s]
            out[np.ix_(idx, idx)] += blk
        for table in (self.Ld, self.Lu):
            for (dst, src), blk in table.items():
                out[np.ix_(self.sectors[dst], self.sectors[src])] += blk
        return out

    def diagonal(self, n: int) -> np.ndarray:
        return self.L0[(n, n)]


def block_decompose(L: LiouvillianMatrix, atol: float = 0.0) -> BlockSet:
    """Split L = L0 + Ld + Lu by how each entry moves the (n_ket, n_bra) charges.

    Blocks whose entries are all <= atol in magnitude are omitted from Ld/Lu.
    """
    L._require_charges()
    if L._blocks is not None and atol == 0.0:
        return L._blocks
    labels = L.sector_labels()
    sectors = {
        s: np.flatnonzero((L.charge_map[:, 0] == s[0]) & (L.charge_map[:, 1] == s[1]))
        for s in labels
    }
    L0, Ld, Lu = {}, {}, {}
    for src in labels:
        for dst in labels:
            blk = L.matrix[np.ix_(sectors[dst], sectors[src])]
            if dst == src:
                L0[src] = blk.copy()
                continue
            if not np.any(np.abs(blk) > atol):
                continue
            down = dst[0] < src[0] and dst[1] < src[1]
            up = dst[0] > src[0] and dst[1] > src[1]
            if not (down or up):
                raise UnsupportedModelError(
                    f"coupling {src}->{dst} neither lowers nor raises both charges; "
                    "the effective Hamiltonian must conserve particle number"
                )
            (Ld if down else Lu)[(dst, src)] = blk.copy()
    blocks = BlockSet(sectors, L0, Ld, Lu, L.size)
    if atol == 0.0:
        L._blocks = blocks
    return blocks


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    right: np.ndarray  # columns are right eigenvectors
    left: np.ndarray  # rows are left eigenvectors; left @ right == I
    diagonalizable: bool
    condition: float

    def zero_modes(self, tol: float = ZERO_EIG_TOL) -> np.ndarray:
        return np.flatnonzero(np.abs(self.eigenvalues) <= tol)


def _sort_order(ev: np.ndarray) -> np.ndarray:
    # descending real part; ties (to 1e-9) by ascending imaginary part
    return np.lexsort((ev.imag, -np.round(ev.real, 9)))


def spectrum(L: LiouvillianMatrix | np.ndarray) -> Spectrum:
    mat = L.matrix if isinstance(L, LiouvillianMatrix) else np.asarray(L)
    try:
        ev, vr = sla.eig(mat)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    order = _sort_order(ev)
    ev, vr = ev[order], vr[:, order]
    vr = vr / np.linalg.norm(vr, axis=0)
    svals = np.linalg.svd(vr, compute_uv=False)
    smin = svals[-1]
    diagonalizable = smin > 1e-8
    cond = float(svals[0] / smin) if smin > 0 else np.inf
    if diagonalizable:
        left = np.linalg.inv(vr)
    else:
        log.warning("Liouvillian is numerically defective (min sv %.2e); using Schur eigenvalues", smin)
        T, _ = sla.schur(mat, output="complex")
        ev = np.diag(T)[_sort_order(np.diag(T))]
        left = np.full_like(vr, np.nan)
    return Spectrum(ev, vr, left, bool(diagonalizable), cond)


def gap(L: LiouvillianMatrix | np.ndarray | Spectrum) -> complex:
    """Leading non-zero eigenvalue in the sorted spectrum (complex; scaling laws use its real part)."""
    spec = L if isinstance(L, Spectrum) else spectrum(L)
    nonzero = np.flatnonzero(np.abs(spec.eigenvalues) > ZERO_EIG_TOL)
    if nonzero.size == 0:
        raise NumericError("spectrum has no non-zero eigenvalue")
    return complex(spec.eigenvalues[nonzero[0]])


def steady_states(L: LiouvillianMatrix) -> list[VectorizedDensity]:
    spec = spectrum(L)
    tr = L.trace_functional()
    out = []
    for i in spec.zero_modes():
        v = spec.right[:, i]
        norm = tr @ v
        if abs(norm) < 1e-12:
            continue  # traceless zero mode (coherence), not a state
        out.append(L.embed_vector(v / norm))
    if not out:
        raise NumericError("no trace-carrying zero mode found")
    return out


def steady_state(L: LiouvillianMatrix) -> VectorizedDensity:
    states = steady_states(L)
    if len(states) > 1:
        log.warning("Liouvillian has %d steady states; returning the first", len(states))
    return states[0]
