import numpy as np
import pytest

from lindqpt.errors import CapacityError, DegeneratePointError, DomainError
from lindqpt.fockspace import build_basis, total_number
from lindqpt.liouvillian import effective_hamiltonian
from lindqpt.models import (
    HK_BASIS,
    TRIPLET_PROJECTOR,
    BlochModel,
    chain_model,
    hk_fock_embedding,
    hk_fock_model,
    hk_initial_state,
    hk_triplet_hamiltonian,
    hk_two_particle_heff,
    lower_band_state,
    many_body_chain,
    pre_quench_energy,
    single_k_hamiltonian,
    single_k_initial_density,
    slater_ground_state,
    two_band_bloch,
    winding_number,
)


def test_winding_numbers_across_the_quench():
    assert winding_number(chain_model(0.5)) == 1
    assert winding_number(chain_model(1.5)) == 0


def test_lower_band_state_is_eigenvector():
    m = chain_model(0.5)
    for k in (0.1, 1.3, -2.0):
        v = lower_band_state(k, m)
        e = -np.linalg.norm(m.d_vector(k))
        assert np.allclose(two_band_bloch(k, m) @ v, e * v)


def test_gap_closing_raises():
    with pytest.raises(DegeneratePointError):
        lower_band_state(np.pi, chain_model(1.0))


def test_negative_strength_rejected():
    with pytest.raises(DomainError):
        chain_model(1.5, 1.0, -0.1)
    with pytest.raises(DomainError):
        BlochModel(family="ladder")


def test_single_k_objects():
    m = chain_model(1.5)
    H = single_k_hamiltonian(0.7, m)
    assert np.allclose(H, H.conj().T)
    assert np.allclose(H @ total_number(build_basis(2)), total_number(build_basis(2)) @ H)
    rho = single_k_initial_density(0.7, chain_model(0.5))
    assert np.trace(rho) == pytest.approx(1.0)
    assert np.allclose(rho @ rho, rho)


def test_hk_triplet_eigenvalues():
    for k in (0.0, 0.9, 2.2):
        for g in (0.0, 0.5):
            h, closed = hk_triplet_hamiltonian(k, g)
            ev = np.sort_complex(np.linalg.eigvals(h))
            assert np.allclose(ev, np.sort_complex(closed), atol=1e-10)
    _, closed = hk_triplet_hamiltonian(0.0, 0.0)
    assert closed[1] == pytest.approx(5.0)


def test_hk_fock_block_matches_two_particle_heff():
    emb = hk_fock_embedding()
    for U, g in ((0.0, 0.0), (3.0, 0.5)):
        fm = hk_fock_model(0.8, U, g)
        heff = effective_hamiltonian(fm.H, fm.jumps)
        assert np.allclose(emb.conj().T @ heff @ emb, hk_two_particle_heff(0.8, U, g))


def test_hk_initial_state_is_triplet():
    psi = hk_initial_state(1.1)
    assert np.linalg.norm(psi) == pytest.approx(1.0)
    assert np.linalg.norm(TRIPLET_PROJECTOR.conj().T @ TRIPLET_PROJECTOR @ psi) == pytest.approx(1.0)
    assert HK_BASIS.dim == 16


def test_many_body_chain_capacity():
    with pytest.raises(CapacityError):
        many_body_chain(9, chain_model(1.5))
    with pytest.raises(DomainError):
        many_body_chain(0, chain_model(1.5))


def test_many_body_chain_structure():
    chain = many_body_chain(2, chain_model(1.5, 1.0, 0.4, 0.004), 0.3)
    H = chain.H.toarray()
    assert np.allclose(H, H.conj().T)
    N = total_number(chain.basis)
    assert np.allclose(H @ N, N @ H)
    heff = effective_hamiltonian(H, [j.toarray() for j in chain.jumps])
    assert np.allclose(heff, chain.heff.toarray())
    assert len(chain.jumps) == 4


def test_slater_state_energy():
    pre = chain_model(0.5)
    for flux in (0.0, 0.4):
        chain = many_body_chain(3, pre, flux)
        psi = chain.embed(slater_ground_state(3, pre, flux), 3)
        assert np.linalg.norm(psi) == pytest.approx(1.0)
        e = np.vdot(psi, chain.H @ psi).real
        assert e == pytest.approx(pre_quench_energy(3, pre, flux), abs=1e-10)
