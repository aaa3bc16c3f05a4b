import numpy as np
import pytest

from qfpt.errors import ModelError
from qfpt.linalg import pure_density, sigma_minus, sigma_z, site_operator
from qfpt.models import (
    ModelSpec,
    build_qnd2,
    build_ring5,
    qnd2_initial,
    ring5_dark_pair_states,
    ring5_dfs_states,
    ring5_initial,
)
from qfpt.sme import IntegratorConfig
from qfpt.subspaces import overlap


class TestQnd2:
    def test_dimension(self, qnd2_system):
        model, _, _ = qnd2_system
        assert model.dim == 4

    def test_dfs_and_gamma(self, qnd2_system):
        _, dfs, part = qnd2_system
        assert [s.dim for s in dfs] == [1, 1]
        assert [s.c_values[0].real for s in dfs] == [-1.0, 1.0]
        assert part.gamma == 2.0

    def test_nondemolition_on_blocks(self, qnd2_system):
        # H does not commute with the measured operator globally, but does on
        # each decoherence-free block (the scalar action makes it automatic)
        model, dfs, _ = qnd2_system
        H, L = model.H, model.Ls[0]
        assert np.max(np.abs(H @ L - L @ H)) > 0.1
        for sub in dfs:
            p = sub.basis @ sub.basis.conj().T
            blk = np.max(np.abs(p @ (H @ L - L @ H) @ p))
            assert blk < 1e-10

    @pytest.mark.parametrize("x0", [0.0, 0.1, 0.5, 1.0])
    def test_initial_overlap(self, qnd2_system, x0):
        _, _, part = qnd2_system
        x, p_comp = overlap(pure_density(qnd2_initial(x0)), part)
        assert x == pytest.approx(x0, abs=1e-12)
        assert p_comp < 1e-12

    def test_initial_extremes(self):
        assert abs(qnd2_initial(1.0)[3]) == 1.0  # |00>
        assert abs(qnd2_initial(0.0)[0]) == 1.0  # |11>

    def test_x0_out_of_range(self):
        with pytest.raises(ModelError):
            qnd2_initial(1.5)


class TestRing5:
    def test_dimension(self, ring5_system):
        model, _, _ = ring5_system
        assert model.dim == 32

    def test_dfs_structure(self, ring5_system):
        _, dfs, part = ring5_system
        assert [s.dim for s in dfs] == [4, 4]
        assert [s.c_values[0].real for s in dfs] == [-1.0, 1.0]
        assert part.gamma == 2.0

    @pytest.mark.parametrize("x0", [0.1, 0.5, 0.9])
    def test_initial_overlap(self, ring5_system, x0):
        _, _, part = ring5_system
        x, p_comp = overlap(pure_density(ring5_initial(x0)), part)
        assert x == pytest.approx(x0, abs=1e-12)
        assert p_comp < 1e-12

    def test_stated_states_are_simultaneous_eigenstates(self, ring5_system):
        model, _, _ = ring5_system
        (q1s, q2s) = ring5_dfs_states()
        for q, c in [(q, -1.0) for q in q1s] + [(q, 1.0) for q in q2s]:
            ev = (q.conj() @ model.H @ q).real
            assert np.linalg.norm(model.H @ q - ev * q) < 1e-8
            assert np.linalg.norm(model.Ls[0] @ q - c * q) < 1e-8

    def test_dark_pair_states_are_exact(self, ring5_system):
        model, _, _ = ring5_system
        chi1, chi2 = ring5_dark_pair_states()
        for chi, c in ((chi1, -1.0), (chi2, 1.0)):
            ev = (chi.conj() @ model.H @ chi).real
            assert np.linalg.norm(model.H @ chi - ev * chi) < 1e-12
            assert np.linalg.norm(model.Ls[0] @ chi - c * chi) < 1e-12

    def test_magnetizations_antisynchronized_inside_dfs(self, ring5_system):
        # trapped in Q1, the second and third qubits (sites 1 and 2) oscillate
        # in perfect antiphase at the standing-wave beat frequency; inside the
        # subspace the noise term vanishes so every trajectory follows the
        # same coherent orbit
        from qfpt.sme import ensemble_means

        model, _, part = ring5_system
        psi0 = ring5_initial(1.0)
        h1 = 1.0
        beat = 2.0 * h1 * (np.cos(2 * np.pi / 5) - np.cos(4 * np.pi / 5))
        period = 2.0 * np.pi / beat
        cfg = IntegratorConfig(dt=1e-3, seed=5)
        obs = {
            "sz1": site_operator(sigma_z, 1, 5),
            "sz2": site_operator(sigma_z, 2, 5),
        }
        times = np.linspace(0.0, period, 120)
        res, _ = ensemble_means(model, psi0, cfg, times, obs, n_traj=2, partition=part)
        a, se_a = res["sz1"]
        b, _ = res["sz2"]
        # identical trajectories: spread is pure cancellation noise
        assert np.max(se_a) < 1e-6
        a = a - a.mean()
        b = b - b.mean()
        corr = float(np.dot(a, b) / np.sqrt(np.dot(a, a) * np.dot(b, b)))
        assert corr <= -0.99
        mean_x, _ = res["x"]
        assert np.max(np.abs(mean_x - 1.0)) < 1e-9


class TestGammaUniversality:
    def test_both_models_share_gamma(self, qnd2_system, ring5_system):
        _, _, p1 = qnd2_system
        _, _, p2 = ring5_system
        assert p1.gamma == p2.gamma  # bitwise

    def test_pathwise_coupling_across_models(self, qnd2_system, ring5_system):
        # with matched noise streams the overlap recursion of both models is
        # the same real-number sequence: exit records coincide trajectory by
        # trajectory up to float rounding (occasional one-grid-step flips)
        from qfpt.sme import IntegratorConfig, simulate_ensemble

        m1, _, p1 = qnd2_system
        m2, _, p2 = ring5_system
        cfg = IntegratorConfig(dt=1e-3, seed=77)
        a = simulate_ensemble(m1, p1, qnd2_initial(0.1), cfg, 0.003, 120, n_workers=1)
        b = simulate_ensemble(m2, p2, ring5_initial(0.1), cfg, 0.003, 120, n_workers=1)
        same_side = sum(ra.side == rb.side for ra, rb in zip(a, b))
        close_time = sum(abs(ra.hit_time - rb.hit_time) <= 2e-3 for ra, rb in zip(a, b))
        assert same_side >= 118
        assert close_time >= 118


class TestModelSpec:
    def test_roundtrip(self):
        spec = ModelSpec(kind="ring5", h0=0.5, h1=1.5, x0=0.3, zeta=0.8)
        again = ModelSpec.from_dict(spec.to_dict())
        assert again == spec

    def test_builds_models(self):
        m = ModelSpec(kind="qnd2", x0=0.2).build()
        assert m.dim == 4
        m = ModelSpec(kind="ring5", x0=0.2).build()
        assert m.dim == 32

    def test_custom_payload_roundtrip(self):
        base = build_qnd2()
        payload = ModelSpec.custom_payload(base.H, base.Ls, base.zetas, qnd2_initial(0.1))
        spec = ModelSpec(kind="custom", custom=payload)
        model = spec.build()
        assert np.array_equal(model.H, base.H)
        assert np.array_equal(model.Ls[0], base.Ls[0])
        psi = spec.initial_state()
        assert np.allclose(psi, qnd2_initial(0.1))

    def test_custom_missing_key(self):
        with pytest.raises(ModelError, match="missing"):
            ModelSpec(kind="custom", custom={"H": [[[1.0, 0.0]]]}).build()

    def test_custom_non_normal_operator_surfaces_on_detection(self):
        from qfpt.subspaces import find_dfs

        payload = ModelSpec.custom_payload(np.eye(2), [sigma_minus], [1.0], np.array([1.0, 0.0]))
        model = ModelSpec(kind="custom", custom=payload).build()
        with pytest.raises(ModelError, match="not normal"):
            find_dfs(model)

    def test_unknown_kind(self):
        with pytest.raises(ModelError, match="unknown model kind"):
            ModelSpec(kind="weird")

    def test_invalid_x0(self):
        with pytest.raises(ModelError, match="x0"):
            ModelSpec(kind="qnd2", x0=0.0)
