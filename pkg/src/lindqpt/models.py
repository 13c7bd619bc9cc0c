"""Model builders: the two-band Bloch model, the Hatsugai-Kohmoto (HK) model
and the periodic chain with two-body loss/gain."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Literal, Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import CapacityError, DegeneratePointError, DomainError
from .fockspace import (
    OccupationBasis,
    annihilation,
    build_basis,
    creation,
    hopping_operator,
    ladder_string,
    number,
)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

ORBITALS = {"A": 0, "B": 1}
MAX_CHAIN_CELLS = 8

DVector = Callable[[float], tuple[float, float, float]]


@dataclass(frozen=True)
class Dissipator:
    kind: Literal["loss", "gain"]
    orbital: str
    strength: float

    def __post_init__(self):
        if self.kind not in ("loss", "gain"):
            raise DomainError(f"dissipator kind must be 'loss' or 'gain', got {self.kind!r}")
        if self.strength < 0:
            raise DomainError(f"{self.kind} strength must be nonnegative, got {self.strength}")


@dataclass(frozen=True)
class BlochModel:
    """Momentum-space two-band model d(k).sigma plus dissipators.

    ``family`` selects the d-vector: ``"chain"`` is (t + w cos k, w sin k, 0);
    ``"hk"`` is (t + w cos k, 0, w sin k).  ``offset`` is t.
    """

    offset: float = 0.5
    hopping: float = 1.0
    family: Literal["chain", "hk"] = "chain"
    dissipators: tuple[Dissipator, ...] = ()
    interaction: float = 0.0
    flux: float = 0.0

    def __post_init__(self):
        if self.family not in ("chain", "hk"):
            raise DomainError(f"unknown d-vector family {self.family!r}")
        if self.interaction < 0:
            raise DomainError("interaction strength U must be nonnegative")

    def d_vector(self, k):
        t, w = self.offset, self.hopping
        if self.family == "chain":
            return (t + w * np.cos(k), w * np.sin(k), 0.0 * np.asarray(k))
        return (t + w * np.cos(k), 0.0 * np.asarray(k), w * np.sin(k))

    def strength(self, kind: str, orbital: str = "A") -> float:
        return sum(d.strength for d in self.dissipators if d.kind == kind and d.orbital == orbital)

    def with_dissipation(self, gamma_loss: float = 0.0, gamma_gain: float = 0.0, orbital: str = "A") -> "BlochModel":
        diss = []
        if gamma_loss:
            diss.append(Dissipator("loss", orbital, gamma_loss))
        if gamma_gain:
            diss.append(Dissipator("gain", orbital, gamma_gain))
        return replace(self, dissipators=tuple(diss))


def chain_model(offset: float, hopping: float = 1.0, gamma_loss: float = 0.0, gamma_gain: float = 0.0) -> BlochModel:
    return BlochModel(offset, hopping, "chain").with_dissipation(gamma_loss, gamma_gain)


@dataclass(frozen=True)
class QuenchSpec:
    pre: BlochModel
    post: BlochModel
    initial_filling: Literal["lower-band", "half-filled"] = "lower-band"


def topological_quench(gamma_loss: float, gamma_gain: float = 0.0, t0: float = 0.5, t1: float = 1.5, w: float = 1.0) -> QuenchSpec:
    """Topological quench t0 -> t1 of the chain model with loss/gain on orbital A."""
    return QuenchSpec(chain_model(t0, w), chain_model(t1, w, gamma_loss, gamma_gain))


# --- two-band single-k -------------------------------------------------------


def two_band_bloch(k: float, model: BlochModel) -> np.ndarray:
    dx, dy, dz = model.d_vector(k)
    return dx * SIGMA_X + dy * SIGMA_Y + dz * SIGMA_Z


def lower_band_state(k: float, model: BlochModel) -> np.ndarray:
    dx, dy, dz = (float(c) for c in model.d_vector(k))
    norm = np.sqrt(dx * dx + dy * dy + dz * dz)
    if norm < 1e-12:
        raise DegeneratePointError(f"band gap closes at k={k}")
    _, vecs = np.linalg.eigh(two_band_bloch(k, model))
    v = vecs[:, 0]
    lead = v[np.flatnonzero(np.abs(v) > 1e-14)[0]]
    return v * (abs(lead) / lead)


def winding_number(model: BlochModel, n_k: int = 400) -> int:
    k = np.linspace(0.0, 2 * np.pi, n_k + 1)
    dx, dy, _ = model.d_vector(k)
    angle = np.unwrap(np.arctan2(dy, dx))
    return int(round((angle[-1] - angle[0]) / (2 * np.pi)))


TWO_MODE_BASIS = build_basis(2)


def _orbital_mode(orbital: str) -> int:
    try:
        return ORBITALS[orbital]
    except KeyError:
        raise DomainError(f"unknown orbital {orbital!r}; expected 'A' or 'B'") from None


def single_k_hamiltonian(k: float, model: BlochModel) -> np.ndarray:
    """Fock-space (4x4) matrix of sum_ab c_a^dag h_ab(k) c_b over modes (A, B)."""
    h = two_band_bloch(k, model)
    c = [annihilation(TWO_MODE_BASIS, m) for m in range(2)]
    return sum(h[a, b] * c[a].conj().T @ c[b] for a in range(2) for b in range(2))


def single_k_jump_operators(model: BlochModel) -> list[np.ndarray]:
    ops = []
    for d in model.dissipators:
        m = _orbital_mode(d.orbital)
        op = annihilation(TWO_MODE_BASIS, m) if d.kind == "loss" else creation(TWO_MODE_BASIS, m)
        ops.append(np.sqrt(d.strength) * op)
    return ops


def single_k_initial_density(k: float, pre: BlochModel) -> np.ndarray:
    """|v_-(k)> embedded in the one-particle sector of the 2-mode Fock space, as a projector."""
    v = lower_band_state(k, pre)
    psi = np.zeros(4, dtype=complex)
    psi[TWO_MODE_BASIS.index(0b01)] = v[0]
    psi[TWO_MODE_BASIS.index(0b10)] = v[1]
    return np.outer(psi, psi.conj())


# --- Hatsugai-Kohmoto ---------------------------------------------------------

HK_MODES = ("A_up", "B_up", "A_dn", "B_dn")
HK_BASIS = build_basis(4)
HK_TWO_PARTICLE_LABELS = ("1010", "1001", "0110", "0101")
TRIPLET_PROJECTOR = np.array(
    [[1, 0, 0, 0], [0, 1 / np.sqrt(2), 1 / np.sqrt(2), 0], [0, 0, 0, 1]], dtype=complex
)


def hk_pre_model() -> BlochModel:
    return BlochModel(0.5, 1.0, "hk")


def hk_post_model() -> BlochModel:
    return BlochModel(1.5, 1.0, "hk")


def hk_two_particle_heff(k: float, U: float, gamma_up_gain: float, post: Optional[BlochModel] = None) -> np.ndarray:
    """Two-particle effective Hamiltonian on (|1010>, |1001>, |0110>, |0101>)."""
    dx, _, dz = (float(c) for c in (post or hk_post_model()).d_vector(k))
    V, g = U, gamma_up_gain
    return np.array(
        [
            [4 * V + 2 * dz, dx, dx, 0],
            [dx, 2 * V, 2 * V, dx],
            [dx, 2 * V, 2 * V - 0.5j * g, dx],
            [0, dx, dx, 4 * V - 2 * dz - 0.5j * g],
        ],
        dtype=complex,
    )


def hk_triplet_hamiltonian(k: float, gamma_up_gain: float, post: Optional[BlochModel] = None):
    """Infinite-U triplet Hamiltonian h(k) (constant 4V - i*gamma/4 removed) and its closed-form eigenvalues."""
    full = TRIPLET_PROJECTOR @ hk_two_particle_heff(k, 0.0, gamma_up_gain, post) @ TRIPLET_PROJECTOR.conj().T
    h = full + 0.25j * gamma_up_gain * np.eye(3)
    dx, _, dz = (float(c) for c in (post or hk_post_model()).d_vector(k))
    eps = np.sqrt((0.25j * gamma_up_gain + 2 * dz) ** 2 + 4 * dx**2 + 0j)
    return h, np.array([0.0, eps, -eps])


def hk_initial_state(k: float, pre: Optional[BlochModel] = None) -> np.ndarray:
    """Half-filled ground state on the 4-state two-particle basis."""
    vA, vB = lower_band_state(k, pre or hk_pre_model())
    return np.array([vA * vA, vA * vB, vA * vB, vB * vB], dtype=complex)


def hk_fock_embedding() -> np.ndarray:
    """(16, 4) isometry placing the two-particle basis into the 4-mode Fock space."""
    emb = np.zeros((HK_BASIS.dim, 4), dtype=complex)
    for j, lab in enumerate(HK_TWO_PARTICLE_LABELS):
        emb[HK_BASIS.index(HK_BASIS.state_from_label(lab)), j] = 1.0
    return emb


@dataclass(frozen=True)
class FockModel:
    basis: OccupationBasis
    H: np.ndarray
    jumps: tuple[np.ndarray, ...]


def hk_fock_model(
    k: float,
    U: float,
    gamma_up_gain: float = 0.0,
    gamma_up_loss: float = 0.0,
    post: Optional[BlochModel] = None,
) -> FockModel:
    """Full 16-dim Fock-space HK Hamiltonian at one momentum with A-up gain/loss.

    The interaction is 4U N_left N_right with c_{left/right} = (c_up -/+ c_dn)/sqrt(2),
    normalised so that its two-particle block matches ``hk_two_particle_heff``.
    """
    b = HK_BASIS
    c = [annihilation(b, m) for m in range(4)]
    h = two_band_bloch(k, post or hk_post_model())
    H = np.zeros((16, 16), dtype=complex)
    for spin in (0, 2):
        for a in range(2):
            for bb in range(2):
                H += h[a, bb] * c[spin + a].conj().T @ c[spin + bb]
    n_left = np.zeros_like(H)
    n_right = np.zeros_like(H)
    for orb in range(2):
        left = (c[orb] - c[orb + 2]) / np.sqrt(2)
        right = (c[orb] + c[orb + 2]) / np.sqrt(2)
        n_left += left.conj().T @ left
        n_right += right.conj().T @ right
    H += 4 * U * n_left @ n_right
    jumps = []
    if gamma_up_gain:
        jumps.append(np.sqrt(gamma_up_gain) * c[0].conj().T)
    if gamma_up_loss:
        jumps.append(np.sqrt(gamma_up_loss) * c[0])
    return FockModel(b, H, tuple(jumps))


# --- many-body chain with two-body loss/gain ----------------------------------


def chain_momenta(n_cells: int, flux: float) -> np.ndarray:
    return (2 * np.pi * np.arange(n_cells) + flux) / n_cells


def real_space_hopping(n_cells: int, model: BlochModel, flux: float) -> np.ndarray:
    """Single-particle matrix T_(x a),(x' b) = (1/N) sum_k e^{ik(x-x')} h_ab(k)."""
    ks = chain_momenta(n_cells, flux)
    x = np.arange(n_cells)
    phase = np.exp(1j * np.subtract.outer(x, x)[None, :, :] * ks[:, None, None]) / n_cells
    hk = np.stack([two_band_bloch(k, model) for k in ks])
    T = np.einsum("kxy,kab->xayb", phase, hk).reshape(2 * n_cells, 2 * n_cells)
    T[np.abs(T) < 1e-13] = 0.0  # drop Fourier round-off so the sparse operator stays local
    return T


@dataclass
class ManyBodyChain:
    n_cells: int
    flux: float
    basis: OccupationBasis
    H: sparse.csr_matrix
    heff: sparse.csr_matrix
    jumps: list[sparse.csr_matrix]
    gamma_loss: float
    gamma_gain: float

    @property
    def num_modes(self) -> int:
        return 2 * self.n_cells

    def sector_basis(self, n: int) -> OccupationBasis:
        return build_basis(self.num_modes, n)

    def sector_heff(self, n: int) -> np.ndarray:
        idx = np.array([self.basis.index(s) for s in self.sector_basis(n).states])
        return self.heff[idx][:, idx].toarray()

    def embed(self, sector_vector: np.ndarray, n: int) -> np.ndarray:
        full = np.zeros(self.basis.dim, dtype=complex)
        for amp, s in zip(sector_vector, self.sector_basis(n).states):
            full[self.basis.index(s)] = amp
        return full


def _chain_modes(x: int) -> tuple[int, int]:
    return 2 * x, 2 * x + 1


def many_body_chain(n_cells: int, model: BlochModel, flux: float = 0.0, *, gamma_loss: Optional[float] = None, gamma_gain: Optional[float] = None) -> ManyBodyChain:
    """Periodic chain of ``n_cells`` with pair loss sqrt(g_l) c_xA c_xB and pair gain sqrt(g_g) c_xA^dag c_xB^dag.

    Dissipation strengths default to the model's orbital-A loss/gain entries.
    Matrices are sparse on the full 2^(2N) Fock space.
    """
    if n_cells < 1:
        raise DomainError("n_cells must be >= 1")
    if n_cells > MAX_CHAIN_CELLS:
        raise CapacityError(f"n_cells={n_cells} exceeds the capacity limit of {MAX_CHAIN_CELLS}")
    gl = model.strength("loss") if gamma_loss is None else gamma_loss
    gg = model.strength("gain") if gamma_gain is None else gamma_gain
    if gl < 0 or gg < 0:
        raise DomainError("dissipation strengths must be nonnegative")
    basis = build_basis(2 * n_cells)
    H = hopping_operator(basis, real_space_hopping(n_cells, model, flux))
    occ = basis.occupations().astype(float)
    nA, nB = occ[:, 0::2], occ[:, 1::2]
    damping = (gl + gg) * (nA * nB).sum(axis=1) + gg * (1 - nA - nB).sum(axis=1)
    heff = (H - 0.5j * sparse.diags(damping)).tocsr()
    jumps = []
    for x in range(n_cells):
        a, b = _chain_modes(x)
        if gl:
            jumps.append(ladder_string(basis, basis, [(a, False), (b, False)], np.sqrt(gl)))
        if gg:
            jumps.append(ladder_string(basis, basis, [(a, True), (b, True)], np.sqrt(gg)))
    return ManyBodyChain(n_cells, flux, basis, H, heff, jumps, gl, gg)


def slater_ground_state(n_cells: int, model: BlochModel, flux: float = 0.0) -> np.ndarray:
    """prod_k b_{-,k}^dag |0> in the half-filled sector basis build_basis(2N, N)."""
    ks = chain_momenta(n_cells, flux)
    x = np.arange(n_cells)
    orbitals = np.zeros((2 * n_cells, n_cells), dtype=complex)
    for j, k in enumerate(ks):
        v = lower_band_state(k, model)
        bloch = np.exp(1j * k * x) / np.sqrt(n_cells)
        orbitals[0::2, j] = v[0] * bloch
        orbitals[1::2, j] = v[1] * bloch
    sector = build_basis(2 * n_cells, n_cells)
    occ = sector.occupations().astype(bool)
    rows = np.array([np.flatnonzero(o) for o in occ])
    psi = np.linalg.det(orbitals[rows])
    return psi / np.linalg.norm(psi)


def pre_quench_energy(n_cells: int, model: BlochModel, flux: float = 0.0) -> float:
    return float(sum(-np.linalg.norm(model.d_vector(k)) for k in chain_momenta(n_cells, flux)))
