import numpy as np
import pytest
import scipy.linalg as sla

from lindqpt.dqpt import single_k_liouvillian
from lindqpt.errors import DomainError, UnsupportedModelError
from lindqpt.fockspace import annihilation, build_basis, creation
from lindqpt.liouvillian import (
    block_decompose,
    build_liouvillian,
    devectorize,
    effective_hamiltonian,
    gap,
    restrict_weak_symmetry,
    spectrum,
    steady_state,
    vectorize,
)
from lindqpt.models import TWO_MODE_BASIS, chain_model

from reference import corrected_liouvillian, printed_liouvillian


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


def lindblad_rhs(H, jumps, rho):
    out = -1j * (H @ rho - rho @ H)
    for L in jumps:
        LdL = L.conj().T @ L
        out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def test_flattening_identity():
    rng = np.random.default_rng(1)
    A, B, R = (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(3))
    assert np.allclose(vectorize(A @ R @ B).data, np.kron(A, B.T) @ vectorize(R).data)


def test_vectorize_round_trip_and_trace():
    rho = np.array([[0.7, 0.1j], [-0.1j, 0.3]])
    v = vectorize(rho)
    assert np.allclose(devectorize(v), rho)
    assert v.trace() == pytest.approx(1.0)
    assert v.inner(v) == pytest.approx(np.trace(rho.conj().T @ rho))


def test_vectorize_rejects_non_square():
    with pytest.raises(DomainError):
        vectorize(np.zeros((2, 3)))


def test_matches_master_equation():
    rng = np.random.default_rng(2)
    H = random_hermitian(rng, 4)
    jumps = [rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)) for _ in range(2)]
    rho = random_hermitian(rng, 4)
    L = build_liouvillian(H, jumps)
    assert np.allclose(devectorize(L.matrix @ vectorize(rho).data), lindblad_rhs(H, jumps, rho))


def test_trace_preserving_and_nonpositive_spectrum():
    rng = np.random.default_rng(3)
    H = random_hermitian(rng, 4)
    jumps = [rng.normal(size=(4, 4)) for _ in range(3)]
    L = build_liouvillian(H, jumps)
    assert np.abs(L.trace_functional() @ L.matrix).max() < 1e-12
    assert spectrum(L).eigenvalues.real.max() < 1e-10


def test_amplitude_damping():
    gamma = 0.7
    b = build_basis(1)
    L = build_liouvillian(np.zeros((2, 2)), [np.sqrt(gamma) * annihilation(b, 0)], b)
    ev = np.sort(spectrum(L).eigenvalues.real)
    assert np.allclose(ev, [-gamma, -gamma / 2, -gamma / 2, 0.0])
    rho = devectorize(sla.expm(L.matrix / gamma) @ vectorize(np.diag([0.0, 1.0])).data)
    assert rho[1, 1].real == pytest.approx(np.exp(-1.0))
    assert gap(L) == pytest.approx(-gamma / 2)


def test_effective_hamiltonian():
    b = build_basis(1)
    c = annihilation(b, 0)
    heff = effective_hamiltonian(np.zeros((2, 2)), [0.5 * c])
    assert np.allclose(heff, np.diag([0, -0.125j]))


def test_restriction_dimensions():
    L = single_k_liouvillian(1.0, chain_model(1.5, 1.0, 0.2, 0.01))
    assert L.size == 6
    full = build_liouvillian(np.zeros((4, 4)), [], TWO_MODE_BASIS)
    assert restrict_weak_symmetry(full, 2).size == 1
    assert restrict_weak_symmetry(full, -1).size == 4
    with pytest.raises(DomainError):
        restrict_weak_symmetry(full, 3)


def test_restriction_needs_charges():
    with pytest.raises(UnsupportedModelError):
        restrict_weak_symmetry(build_liouvillian(np.eye(2)))


def test_blocks_reassemble():
    L = single_k_liouvillian(0.4, chain_model(1.5, 1.0, 0.3, 0.02))
    blocks = block_decompose(L)
    assert np.allclose(blocks.reassemble(), L.matrix)
    assert set(blocks.sectors) == {(0, 0), (1, 1), (2, 2)}
    assert blocks.Lu and blocks.Ld


def test_pure_loss_has_no_upward_blocks():
    blocks = block_decompose(single_k_liouvillian(0.4, chain_model(1.5, 1.0, 0.3)))
    assert not blocks.Lu


def test_steady_states_pure_loss_and_gain():
    b = build_basis(2)
    H = np.zeros((4, 4))
    loss = [annihilation(b, m) for m in range(2)]
    gain = [creation(b, m) for m in range(2)]
    vac = steady_state(build_liouvillian(H, loss, b)).matrix()
    full = steady_state(build_liouvillian(H, gain, b)).matrix()
    assert np.allclose(vac, np.diag([1, 0, 0, 0]))
    assert np.allclose(full, np.diag([0, 0, 0, 1]))


def test_six_by_six_against_hand_derivation():
    rng = np.random.default_rng(4)
    for _ in range(10):
        k, gl, gg = rng.uniform(-np.pi, np.pi), rng.uniform(0, 1), rng.uniform(0, 1)
        L = single_k_liouvillian(k, chain_model(1.5, 1.0, gl, gg)).matrix
        assert np.abs(L - corrected_liouvillian(k, gl, gg)).max() < 1e-12


def test_displayed_matrix_agrees_where_dy_vanishes():
    for k in (0.0, np.pi):
        L = single_k_liouvillian(k, chain_model(1.5, 1.0, 0.3, 0.05)).matrix
        assert np.abs(L - printed_liouvillian(k, 0.3, 0.05)).max() < 1e-12


def test_displayed_matrix_is_not_trace_preserving():
    m = printed_liouvillian(1.0, 0.3, 0.05)
    trace_rows = np.array([1, 1, 0, 0, 1, 1])
    assert np.abs(trace_rows @ m).max() > 0.1
