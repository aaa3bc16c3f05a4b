import numpy as np
import pytest

from qfpt.errors import ClosureError, DivergenceError, ModelError
from qfpt.linalg import basis_columns, projector, pure_density, sigma_minus, sigma_z
from qfpt.models import (
    build_qnd2,
    build_ring5,
    qnd2_initial,
    ring5_dark_pair_states,
    ring5_dfs_states,
)
from qfpt.subspaces import QuantumModel, build_partition, find_dfs, overlap
from qfpt.analytic import params_from_partition


class TestQuantumModel:
    def test_rejects_non_hermitian_hamiltonian(self):
        with pytest.raises(ModelError, match="Hermitian"):
            QuantumModel(H=np.array([[0.0, 1.0], [0.0, 0.0]]), Ls=[sigma_z])

    def test_rejects_mismatched_efficiencies(self):
        with pytest.raises(ModelError, match="efficiencies"):
            QuantumModel(H=np.eye(2), Ls=[sigma_z], zetas=[0.5, 0.5])

    def test_rejects_efficiency_outside_unit_interval(self):
        with pytest.raises(ModelError, match="outside"):
            QuantumModel(H=np.eye(2), Ls=[sigma_z], zetas=[1.5])

    def test_operators_are_frozen(self):
        m = QuantumModel(H=np.eye(2), Ls=[sigma_z], zetas=[1.0])
        with pytest.raises(ValueError):
            m.H[0, 0] = 2.0


class TestFindDfs:
    def test_qnd2_two_singlets(self, qnd2_system):
        _, dfs, _ = qnd2_system
        assert [s.dim for s in dfs] == [1, 1]
        assert dfs[0].c_values[0] == pytest.approx(-1.0)
        assert dfs[1].c_values[0] == pytest.approx(1.0)
        # |00> = ground x ground is computational index 3, |11> index 0
        assert abs(dfs[0].basis[3, 0]) == pytest.approx(1.0, abs=1e-12)
        assert abs(dfs[1].basis[0, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_single_qubit_diagonal(self):
        model = QuantumModel(H=sigma_z, Ls=[sigma_z])
        dfs = find_dfs(model)
        assert [s.dim for s in dfs] == [1, 1]
        assert dfs[0].c_values[0] == pytest.approx(-1.0)
        assert dfs[1].c_values[0] == pytest.approx(1.0)

    def test_ring5_four_dimensional_blocks(self, ring5_system):
        # the measured site supports a two-flip dark state per sector on top
        # of the single-flip standing waves and the polarized state
        _, dfs, _ = ring5_system
        assert [s.dim for s in dfs] == [4, 4]
        assert dfs[0].c_values[0] == pytest.approx(-1.0, abs=1e-10)
        assert dfs[1].c_values[0] == pytest.approx(1.0, abs=1e-10)

    def test_ring5_contains_standing_wave_states(self, ring5_system):
        _, dfs, part = ring5_system
        (q1s, q2s) = ring5_dfs_states()
        for q in q1s:
            assert np.linalg.norm(part.P_Q1 @ q - q) < 1e-8
        for q in q2s:
            assert np.linalg.norm(part.P_Q2 @ q - q) < 1e-8

    def test_ring5_projector_equality_with_pair_states(self, ring5_system):
        _, _, part = ring5_system
        (q1s, q2s) = ring5_dfs_states()
        chi1, chi2 = ring5_dark_pair_states()
        p1 = projector(basis_columns(list(q1s) + [chi1]))
        p2 = projector(basis_columns(list(q2s) + [chi2]))
        assert np.max(np.abs(p1 - part.P_Q1)) < 1e-8
        assert np.max(np.abs(p2 - part.P_Q2)) < 1e-8

    def test_detected_states_are_simultaneous_eigenstates(self, ring5_system):
        model, dfs, _ = ring5_system
        for sub in dfs:
            for j in range(sub.dim):
                v = sub.basis[:, j]
                ev = (v.conj() @ model.H @ v).real
                assert np.linalg.norm(model.H @ v - ev * v) < 1e-8
                assert np.linalg.norm(model.Ls[0] @ v - sub.c_values[0] * v) < 1e-8

    def test_eigen_action_and_invariance_residuals(self, qnd2_system):
        model, dfs, _ = qnd2_system
        for sub in dfs:
            off = np.eye(model.dim) - sub.basis @ sub.basis.conj().T
            for j in range(sub.dim):
                v = sub.basis[:, j]
                assert np.linalg.norm(model.Ls[0] @ v - sub.c_values[0] * v) < 1e-8
                assert np.linalg.norm(off @ (model.H @ v)) < 1e-8

    def test_non_normal_operator_rejected(self):
        with pytest.raises(ModelError, match="not normal"):
            find_dfs(QuantumModel(H=np.eye(2), Ls=[sigma_minus]))

    def test_no_dfs_is_empty_list(self):
        sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
        assert find_dfs(QuantumModel(H=sx, Ls=[sigma_z])) == []

    def test_normal_non_hermitian_channel(self):
        # unitary measurement operator: normal but not Hermitian
        u = np.diag([1.0, 1j]).astype(complex)
        dfs = find_dfs(QuantumModel(H=np.diag([1.0, 2.0]).astype(complex), Ls=[u]))
        assert [s.dim for s in dfs] == [1, 1]
        cs = {complex(s.c_values[0]) for s in dfs}
        assert any(abs(c - 1.0) < 1e-10 for c in cs)
        assert any(abs(c - 1j) < 1e-10 for c in cs)


class TestBuildPartition:
    def test_qnd2_gamma(self, qnd2_system):
        _, _, part = qnd2_system
        assert part.gamma == 2.0
        assert part.closed

    def test_efficiency_scaling(self):
        model = build_qnd2(zeta=0.25)
        part = build_partition(model, find_dfs(model))
        assert part.gamma == pytest.approx(1.0, abs=1e-14)

    def test_ring5_gamma(self, ring5_system):
        _, _, part = ring5_system
        assert part.gamma == 2.0

    def test_completeness_and_orthogonality(self, ring5_system):
        model, _, part = ring5_system
        eye = np.eye(model.dim)
        assert np.max(np.abs(part.P_Q1 + part.P_Q2 + part.P_P - eye)) < 1e-10
        assert np.max(np.abs(part.P_Q1 @ part.P_Q2)) < 1e-10

    def test_gamma_invariant_under_operator_shift(self):
        base = build_qnd2()
        shifted = QuantumModel(H=base.H, Ls=[base.Ls[0] + (0.7 + 0.2j) * np.eye(4)], zetas=base.zetas)
        p0 = build_partition(base, find_dfs(base))
        p1 = build_partition(shifted, find_dfs(shifted))
        assert p1.gamma == pytest.approx(p0.gamma, abs=1e-12)

    def test_overlapping_selection_rejected(self, qnd2_system):
        model, dfs, _ = qnd2_system
        with pytest.raises(ModelError, match="overlap"):
            build_partition(model, dfs, select=((0,), (0, 1)))

    def test_empty_selection_rejected(self, qnd2_system):
        model, dfs, _ = qnd2_system
        with pytest.raises(ModelError, match="nonempty"):
            build_partition(model, dfs, select=((), (1,)))

    def test_non_closed_partition_flagged_and_refused_downstream(self):
        model = QuantumModel(H=np.diag([1.0, 2.0, 3.0]).astype(complex), Ls=[np.diag([-1.0, 0.0, 1.0]).astype(complex)])
        dfs = find_dfs(model)
        assert [s.dim for s in dfs] == [1, 1, 1]
        part = build_partition(model, dfs, select=((0, 1), (2,)))
        assert not part.closed
        with pytest.raises(ClosureError, match="closed overlap diffusion"):
            params_from_partition(part, 0.003, 0.1)

    def test_noise_weights_norm_is_gamma(self, ring5_system):
        _, _, part = ring5_system
        assert np.linalg.norm(part.noise_weights) == pytest.approx(part.gamma, abs=1e-14)


class TestOverlap:
    def test_eigenstate(self, qnd2_system):
        _, _, part = qnd2_system
        rho = pure_density(qnd2_initial(1.0))
        x, p_comp = overlap(rho, part)
        assert x == pytest.approx(1.0, abs=1e-12)
        assert p_comp == pytest.approx(0.0, abs=1e-12)

    def test_initial_overlap(self, qnd2_system):
        _, _, part = qnd2_system
        x, _ = overlap(pure_density(qnd2_initial(0.1)), part)
        assert x == pytest.approx(0.1, abs=1e-12)

    def test_maximally_mixed(self, qnd2_system):
        _, _, part = qnd2_system
        x, p_comp = overlap(np.eye(4) / 4.0, part)
        assert x == pytest.approx(0.25, abs=1e-12)
        assert p_comp == pytest.approx(0.5, abs=1e-12)

    def test_divergence_detected(self, qnd2_system):
        _, _, part = qnd2_system
        with pytest.raises(DivergenceError, match="diverged"):
            overlap(1.5 * pure_density(qnd2_initial(1.0)), part)

    def test_clamps_tiny_overshoot(self, qnd2_system):
        _, _, part = qnd2_system
        rho = (1.0 + 5e-10) * pure_density(qnd2_initial(1.0))
        x, _ = overlap(rho, part)
        assert x == 1.0
