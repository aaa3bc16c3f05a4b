import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfpt.linalg import (
    MAX_DIM,
    commutator,
    dagger,
    density_operator,
    expectation,
    hermitize,
    ket_excited,
    ket_ground,
    matrix_from_pairs,
    matrix_to_pairs,
    normalized,
    projector,
    pure_density,
    sigma_minus,
    sigma_plus,
    sigma_z,
    site_operator,
    state_vector,
    tensor,
    vector_from_pairs,
    vector_to_pairs,
)


def test_sign_convention():
    # |0> is the ground state with sigma_z |0> = -|0>
    assert np.allclose(sigma_z @ ket_ground, -ket_ground)
    assert np.allclose(sigma_z @ ket_excited, ket_excited)
    assert np.allclose(sigma_plus @ ket_ground, ket_excited)
    assert np.allclose(sigma_minus @ ket_ground, 0.0)


class TestTensor:
    def test_identity(self):
        assert np.array_equal(tensor(np.eye(2), np.eye(2)), np.eye(4))

    def test_sigma_z_blocks(self):
        assert np.array_equal(tensor(sigma_z, np.eye(2)), np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex))

    def test_five_qubit_identity(self):
        assert np.array_equal(tensor(*[np.eye(2)] * 5), np.eye(32))

    def test_dimension_cap(self):
        with pytest.raises(ValueError, match=f"exceeds MAX_DIM={MAX_DIM}"):
            tensor(np.eye(8), np.eye(16))

    def test_left_to_right_evaluation(self):
        rng = np.random.default_rng(0)
        a, b, c = (rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(3))
        assert np.array_equal(tensor(a, b, c), np.kron(np.kron(a, b), c))
        assert np.allclose(tensor(a, b, c), np.kron(a, np.kron(b, c)), atol=1e-15)


class TestSiteOperator:
    def test_single_site(self):
        assert np.array_equal(site_operator(sigma_z, 0, 1), sigma_z)

    def test_first_of_two(self):
        assert np.array_equal(site_operator(sigma_z, 0, 2), np.kron(sigma_z, np.eye(2)))

    def test_second_of_two(self):
        assert np.array_equal(site_operator(sigma_z, 1, 2), np.kron(np.eye(2), sigma_z))

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            site_operator(sigma_z, 2, 2)


class TestExpectation:
    def test_ground_state_magnetization(self):
        rho = pure_density(ket_ground)
        assert expectation(rho, sigma_z) == pytest.approx(-1.0, abs=1e-12)

    def test_maximally_mixed_traceless(self):
        rho = np.eye(4) / 4.0
        a = np.diag([1.0, -1.0, 2.0, -2.0]).astype(complex)
        assert expectation(rho, a) == pytest.approx(0.0, abs=1e-12)

    def test_initial_overlap(self, qnd2_system):
        from qfpt.models import qnd2_initial

        _, _, part = qnd2_system
        rho = pure_density(qnd2_initial(0.1))
        assert expectation(rho, part.P_Q1).real == pytest.approx(0.1, abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            expectation(np.eye(2) / 2, np.eye(4))


def test_commutator_self_vanishes():
    assert np.array_equal(commutator(sigma_z, sigma_z), np.zeros((2, 2)))


def test_dagger():
    a = np.array([[1.0, 2.0j], [0.0, 3.0]])
    assert np.array_equal(dagger(a), np.array([[1.0, 0.0], [-2.0j, 3.0]]))


def test_hermitize():
    a = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex)
    h = hermitize(a)
    assert np.array_equal(h, h.conj().T)


class TestProjector:
    def test_rank_one(self):
        ket00 = np.kron(ket_ground, ket_ground)
        p = projector([ket00])
        assert np.trace(p).real == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(p @ p, p, atol=1e-12)

    def test_ring_states_rank_three(self):
        from qfpt.models import ring5_dfs_states

        (q1s, _) = ring5_dfs_states()
        p = projector(np.column_stack(q1s))
        assert np.trace(p).real == pytest.approx(3.0, abs=1e-10)
        assert np.max(np.abs(p @ p - p)) < 1e-10

    def test_non_orthonormal_rejected_with_diagnostic(self):
        v1 = np.array([1.0, 0.0], dtype=complex)
        v2 = np.array([np.sqrt(0.5), np.sqrt(0.5)], dtype=complex)
        with pytest.raises(ValueError, match="worst Gram deviation"):
            projector(np.column_stack([v1, v2]))


@st.composite
def random_orthonormal_basis(draw):
    dim = draw(st.integers(min_value=2, max_value=8))
    r = draw(st.integers(min_value=1, max_value=dim))
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    g = np.random.default_rng(seed)
    m = g.normal(size=(dim, r)) + 1j * g.normal(size=(dim, r))
    q, _ = np.linalg.qr(m)
    return q


@given(random_orthonormal_basis())
@settings(max_examples=50, deadline=None)
def test_projector_idempotent_hermitian(basis):
    p = projector(basis)
    assert np.max(np.abs(p @ p - p)) < 1e-10
    assert np.max(np.abs(p - p.conj().T)) < 1e-10


@given(st.integers(min_value=2, max_value=12), st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_expectation_of_identity_is_one(dim, seed):
    g = np.random.default_rng(seed)
    m = g.normal(size=(dim, dim)) + 1j * g.normal(size=(dim, dim))
    rho = m @ m.conj().T
    rho /= np.trace(rho).real
    assert abs(expectation(rho, np.eye(dim)) - 1.0) < 1e-10


class TestStateValidation:
    def test_state_vector_accepts_unit_norm(self):
        v = state_vector([1.0, 0.0])
        assert v.dtype == complex

    def test_state_vector_rejects_bad_norm(self):
        with pytest.raises(ValueError, match="norm"):
            state_vector([1.0, 1.0])

    def test_normalized(self):
        v = normalized([3.0, 4.0])
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-15)

    def test_density_validation(self):
        density_operator(np.eye(2) / 2)
        with pytest.raises(ValueError, match="Hermitian"):
            density_operator(np.array([[0.5, 0.5], [0.0, 0.5]]))
        with pytest.raises(ValueError, match="trace"):
            density_operator(np.eye(2))
        with pytest.raises(ValueError, match="negative eigenvalue"):
            density_operator(np.diag([1.5, -0.5]))


def test_matrix_serialization_roundtrip():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    pairs = matrix_to_pairs(m)
    assert pairs[0][1] == [m[0, 1].real, m[0, 1].imag]
    assert np.array_equal(matrix_from_pairs(pairs), m)


def test_vector_serialization_roundtrip():
    v = np.array([0.5 + 0.1j, -0.25, 1j])
    assert np.array_equal(vector_from_pairs(vector_to_pairs(v)), v)


def test_matrix_from_pairs_rejects_bad_shape():
    with pytest.raises(ValueError, match="re, im"):
        matrix_from_pairs([[1.0, 2.0], [3.0, 4.0]])
