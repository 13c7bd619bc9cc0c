"""Fermionic occupation-number bases and Jordan-Wigner operator matrices.

Mode ordering convention used everywhere in the package: modes are ordered
by unit cell, then orbital (A before B), then spin (up before down).  A basis
state is stored as an integer whose bit ``m`` holds the occupation of mode
``m``; states are listed in ascending integer order, which for two modes
gives |00>, |10>, |01>, |11> (ket labels list mode 0 first).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Literal, Optional

import numpy as np
from scipy import sparse

from .errors import DomainError

OperatorKind = Literal["annihilation", "creation", "number"]


class FockDomainError(DomainError):
    """Invalid mode, particle number or basis for a Fock-space request."""


@dataclass(frozen=True)
class OccupationBasis:
    num_modes: int
    states: tuple[int, ...]
    sector_filter: Optional[int] = None
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    @property
    def dim(self) -> int:
        return len(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def index(self, state: int) -> int:
        return self._index[state]

    def occupations(self) -> np.ndarray:
        """(dim, num_modes) array of 0/1 occupations."""
        s = np.asarray(self.states, dtype=np.int64)[:, None]
        return ((s >> np.arange(self.num_modes)) & 1).astype(np.int8)

    def particle_numbers(self) -> np.ndarray:
        return self.occupations().sum(axis=1).astype(int)

    def label(self, i: int) -> str:
        s = self.states[i]
        return "".join(str((s >> m) & 1) for m in range(self.num_modes))

    def state_from_label(self, label: str) -> int:
        """Integer encoding of a ket label such as ``"1001"`` (mode 0 first)."""
        if len(label) != self.num_modes or set(label) - {"0", "1"}:
            raise FockDomainError(f"bad occupation label {label!r}")
        return sum(1 << m for m, ch in enumerate(label) if ch == "1")

    def ket(self, label: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(self.state_from_label(label))] = 1.0
        return v


def build_basis(num_modes: int, particle_number: Optional[int] = None) -> OccupationBasis:
    if num_modes < 1:
        raise FockDomainError("num_modes must be >= 1")
    if particle_number is not None and not 0 <= particle_number <= num_modes:
        raise FockDomainError(
            f"particle_number={particle_number} outside [0, {num_modes}]"
        )
    states = range(1 << num_modes)
    if particle_number is not None:
        states = (s for s in states if s.bit_count() == particle_number)
    basis = OccupationBasis(num_modes, tuple(states), particle_number)
    expected = (1 << num_modes) if particle_number is None else comb(num_modes, particle_number)
    assert basis.dim == expected
    return basis


@dataclass(frozen=True)
class FermionOperatorMatrix:
    basis: OccupationBasis
    mode: int
    kind: OperatorKind
    matrix: np.ndarray


def _annihilation(basis: OccupationBasis, mode: int) -> np.ndarray:
    dim = basis.dim
    mat = np.zeros((dim, dim), dtype=complex)
    lower = (1 << mode) - 1
    for j, s in enumerate(basis.states):
        if (s >> mode) & 1:
            sign = -1.0 if (s & lower).bit_count() % 2 else 1.0
            mat[basis.index(s ^ (1 << mode)), j] = sign
    return mat


def operator_matrix(basis: OccupationBasis, mode: int, kind: OperatorKind) -> FermionOperatorMatrix:
    if basis.sector_filter is not None:
        raise FockDomainError(
            "ladder operators change particle number; build them on the full "
            "Fock space and project afterwards"
        )
    if not 0 <= mode < basis.num_modes:
        raise FockDomainError(f"mode {mode} outside [0, {basis.num_modes})")
    c = _annihilation(basis, mode)
    if kind == "annihilation":
        mat = c
    elif kind == "creation":
        mat = c.conj().T.copy()
    elif kind == "number":
        mat = c.conj().T @ c
    else:
        raise FockDomainError(f"unknown operator kind {kind!r}")
    mat.setflags(write=False)
    return FermionOperatorMatrix(basis, mode, kind, mat)


def annihilation(basis: OccupationBasis, mode: int) -> np.ndarray:
    return operator_matrix(basis, mode, "annihilation").matrix


def creation(basis: OccupationBasis, mode: int) -> np.ndarray:
    return operator_matrix(basis, mode, "creation").matrix


def number(basis: OccupationBasis, mode: int) -> np.ndarray:
    return operator_matrix(basis, mode, "number").matrix


def total_number(basis: OccupationBasis) -> np.ndarray:
    return np.diag(basis.particle_numbers().astype(complex))


def sector_projector(basis: OccupationBasis, n: int) -> np.ndarray:
    """Diagonal 0/1 matrix selecting basis states with exactly ``n`` particles."""
    if not 0 <= n <= basis.num_modes:
        raise FockDomainError(f"n={n} outside [0, {basis.num_modes}]")
    return np.diag((basis.particle_numbers() == n).astype(complex))


def sector_indices(basis: OccupationBasis, n: int) -> np.ndarray:
    return np.flatnonzero(basis.particle_numbers() == n)


def mode_index(cell: int, orbital: int, spin: int = 0, *, n_orbitals: int = 2, n_spins: int = 1) -> int:
    """Position of (cell, orbital, spin) in the Jordan-Wigner string."""
    return (cell * n_orbitals + orbital) * n_spins + spin


def _ladder_action(states: np.ndarray, mode: int, dagger: bool):
    """Apply c_mode (or its adjoint) to an array of basis integers.

    Returns (new_states, signs, valid) with the Jordan-Wigner sign.
    """
    bit = np.int64(1) << mode
    occupied = (states & bit) != 0
    valid = ~occupied if dagger else occupied
    below = np.bitwise_count(states & (bit - 1)).astype(np.int64)
    signs = np.where(below % 2, -1.0, 1.0)
    return states ^ bit, signs, valid


def ladder_string(
    basis_in: OccupationBasis,
    basis_out: OccupationBasis,
    factors: list[tuple[int, bool]],
    coefficient: complex = 1.0,
) -> sparse.csr_matrix:
    """Sparse matrix of ``coefficient * f_1 f_2 ... f_r`` from ``basis_in`` to ``basis_out``.

    ``factors`` lists ``(mode, dagger)`` pairs in operator-product order, so the
    last entry acts first.  Images outside ``basis_out`` are dropped.
    """
    states = np.asarray(basis_in.states, dtype=np.int64)
    amp = np.full(states.shape, complex(coefficient))
    alive = np.ones(states.shape, dtype=bool)
    for mode, dagger in reversed(factors):
        states, signs, valid = _ladder_action(states, mode, dagger)
        alive &= valid
        amp = amp * signs
    cols = np.flatnonzero(alive)
    lookup = basis_out._index
    rows = np.array([lookup.get(int(s), -1) for s in states[cols]], dtype=np.int64)
    keep = rows >= 0
    return sparse.csr_matrix(
        (amp[cols][keep], (rows[keep], cols[keep])), shape=(basis_out.dim, basis_in.dim)
    )


def hopping_operator(basis: OccupationBasis, hopping: np.ndarray) -> sparse.csr_matrix:
    """Sparse ``sum_ij hopping[i, j] c_i^dag c_j`` on a (possibly sector-filtered) basis."""
    n = basis.num_modes
    if hopping.shape != (n, n):
        raise FockDomainError(f"hopping matrix must be {n}x{n}")
    total = sparse.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for i, j in zip(*np.nonzero(np.abs(hopping) > 0)):
        total = total + ladder_string(basis, basis, [(int(i), True), (int(j), False)], hopping[i, j])
    return total.tocsr()
