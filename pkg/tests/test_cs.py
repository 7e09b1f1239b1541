import numpy as np
import pytest
from scipy.linalg import hadamard

from e3dtv.cs import CsState, build_operator, default_cs_config, fwht, reconstruct, solve_z
from e3dtv.denoise import SolverConfig
from e3dtv.harness import gen_phantom, psnr


def dense_psi(op):
    """Explicit m x n matrix of the operator, assembled from its definition."""
    h = hadamard(op.n_pad) / np.sqrt(op.n_pad)
    perm = np.zeros((op.n_pad, op.n_pad))
    perm[np.arange(op.n_pad), op.perm] = 1.0  # (P z)[i] = z[perm[i]]
    pad = np.eye(op.n_pad)[:, : op.n]
    return (h @ perm @ pad)[op.sample_idx]


def cs_state(op, rng, mu4=2.0, mu5=0.5):
    shape = op.dims
    hw, s = shape[0] * shape[1], shape[2]
    mats = [rng.standard_normal((hw, s)) for _ in range(4)]
    return CsState(z=np.zeros((hw, s)), x=mats[0], e=mats[1], factors=[], m=[],
                   gamma1=rng.standard_normal(op.m), gamma2=mats[2],
                   mu=np.array([1.0, 1.0, 1.0, mu4, mu5]), shape=shape)


class TestHadamard:
    @pytest.mark.parametrize("n", [1, 2, 8, 64])
    def test_matches_dense(self, rng, n):
        a = rng.standard_normal(n)
        assert np.allclose(fwht(a), hadamard(n) @ a, atol=1e-12)

    def test_involution(self, rng):
        a = rng.standard_normal(32)
        assert np.allclose(fwht(fwht(a)) / 32, a, atol=1e-13)


class TestOperator:
    def test_measurement_count(self):
        assert build_operator(2, 2, 2, 0.25).m == 2

    def test_padding(self):
        op = build_operator(3, 3, 3, 0.5)
        assert op.n == 27 and op.n_pad == 32

    def test_deterministic(self):
        a = build_operator(4, 4, 4, 0.3, seed=9)
        b = build_operator(4, 4, 4, 0.3, seed=9)
        assert np.array_equal(a.perm, b.perm) and np.array_equal(a.sample_idx, b.sample_idx)
        assert not np.array_equal(a.perm, build_operator(4, 4, 4, 0.3, seed=10).perm)

    def test_structure(self):
        op = build_operator(4, 4, 4, 0.3, seed=2)
        assert np.array_equal(np.sort(op.perm), np.arange(op.n_pad))
        assert np.all(np.diff(op.sample_idx) > 0)
        assert op.sample_idx[0] == 0

    @pytest.mark.parametrize("ratio", [0.003, 0.01, 0.05, 0.1, 0.2])
    def test_standard_ratios_round(self, ratio):
        op = build_operator(32, 32, 16, ratio)
        assert op.m == round(ratio * 32 * 32 * 16)

    @pytest.mark.parametrize("ratio", [0.0, -0.1, 1.5])
    def test_bad_ratio(self, ratio):
        with pytest.raises(ValueError):
            build_operator(4, 4, 4, ratio)

    def test_zero_measurements(self):
        with pytest.raises(ValueError):
            build_operator(2, 2, 2, 0.01)

    def test_matches_dense(self, rng):
        op = build_operator(3, 2, 2, 0.5, seed=4)
        z = rng.standard_normal(op.n)
        y = rng.standard_normal(op.m)
        psi = dense_psi(op)
        assert np.allclose(op.apply(z), psi @ z, atol=1e-13)
        assert np.allclose(op.adjoint(y), psi.T @ y, atol=1e-13)

    def test_adjoint(self, rng):
        op = build_operator(2, 2, 4, 0.25, seed=1)
        assert op.n_pad == 16 and op.m == 4
        for _ in range(20):
            z = rng.standard_normal(op.n)
            y = rng.standard_normal(op.m)
            lhs, rhs = op.apply(z) @ y, z @ op.adjoint(y)
            assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(z) * np.linalg.norm(y)

    def test_row_orthonormal(self, rng):
        op = build_operator(4, 4, 4, 0.3, seed=3)
        y = rng.standard_normal(op.m)
        assert np.allclose(op.apply(op.adjoint(y)), y, atol=1e-13)

    def test_full_rate_is_orthonormal(self, rng):
        op = build_operator(4, 4, 4, 1.0, seed=3)
        z = rng.standard_normal(op.n)
        assert np.allclose(op.adjoint(op.apply(z)), z, atol=1e-13)

    def test_projection(self, rng):
        op = build_operator(8, 4, 2, 0.4, seed=6)
        z = rng.standard_normal(op.n)
        p1 = op.adjoint(op.apply(z))
        assert np.allclose(op.adjoint(op.apply(p1)), p1, atol=1e-10)

    def test_padding_breaks_projection(self, rng):
        # with n < n_pad the operator only sees a slice of the Hadamard
        # columns, so Psi^* Psi is a compression of a projection
        op = build_operator(5, 3, 3, 0.4, seed=6)
        gram = dense_psi(op).T @ dense_psi(op)
        eig = np.linalg.eigvalsh(gram)
        assert eig.min() >= -1e-12 and eig.max() <= 1 + 1e-12
        assert not np.allclose(gram @ gram, gram, atol=1e-6)

    def test_zero_signal(self):
        op = build_operator(4, 4, 2, 0.5)
        assert not np.any(op.apply(np.zeros(op.dims)))

    def test_accepts_cube_and_unfolded(self, rng):
        op = build_operator(4, 3, 2, 0.5)
        x = rng.standard_normal(op.dims)
        flat = op.apply(x.ravel(order="F"))
        assert np.array_equal(op.apply(x), flat)
        assert np.array_equal(op.apply(x.reshape((12, 2), order="F")), flat)

    def test_length_mismatch(self):
        op = build_operator(4, 4, 2, 0.5)
        with pytest.raises(ValueError):
            op.apply(np.zeros(31))
        with pytest.raises(ValueError):
            op.adjoint(np.zeros(op.m + 1))


class TestSolveZ:
    def test_identity_shortcut(self, rng):
        op = build_operator(2, 2, 4, 0.5)
        state = cs_state(op, rng, mu4=0.0, mu5=0.5)
        z = solve_z(state, rng.standard_normal(op.m), op)
        expected = (state.x + state.e) - state.gamma2 / 0.5 + op.adjoint_matrix(state.gamma1) / 0.5
        assert np.allclose(z, expected, atol=1e-13)
        assert state.cg_iters == 0

    def test_matches_dense(self, rng):
        op = build_operator(2, 2, 4, 0.5, seed=5)
        state = cs_state(op, rng)
        y = rng.standard_normal(op.m)
        z = solve_z(state, y, op, tol=1e-12)
        psi = dense_psi(op)
        mu4, mu5 = state.mu[3], state.mu[4]
        rhs = (mu5 * (state.x + state.e) - state.gamma2).ravel(order="F") \
            + psi.T @ (mu4 * y + state.gamma1)
        ref = np.linalg.solve(mu4 * psi.T @ psi + mu5 * np.eye(op.n), rhs)
        assert np.linalg.norm(z.ravel(order="F") - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_few_iterations(self, rng):
        op = build_operator(8, 8, 4, 0.2, seed=1)
        for mu4, mu5 in [(10.0, 1.0), (1e3, 1e-2), (0.1, 5.0)]:
            state = cs_state(op, rng, mu4, mu5)
            solve_z(state, rng.standard_normal(op.m), op, tol=1e-8)
            assert state.cg_iters <= 5

    def test_residual_decreases(self, rng):
        op = build_operator(8, 8, 4, 0.2, seed=1)
        state = cs_state(op, rng)
        hist = []
        solve_z(state, rng.standard_normal(op.m), op, tol=1e-14, residuals=hist)
        assert len(hist) >= 1
        assert all(b < a for a, b in zip(hist, hist[1:]))


class TestReconstruct:
    def test_zero_measurements(self):
        op = build_operator(8, 8, 4, 0.3)
        z, x, rep = reconstruct(np.zeros(op.m), op, default_cs_config(0.3, rank=2))
        assert not np.any(z) and not np.any(x)

    def test_full_rate(self):
        x0 = gen_phantom(16, 16, 8, rank=3, seed=2)
        op = build_operator(16, 16, 8, 1.0, seed=3)
        z, _, rep = reconstruct(op.apply(x0), op, default_cs_config(1.0, rank=3))
        assert rep.converged
        assert np.linalg.norm(z - x0) <= 1e-3 * np.linalg.norm(x0)

    def test_measurement_consistency(self):
        x0 = gen_phantom(16, 16, 8, rank=3, seed=2)
        op = build_operator(16, 16, 8, 0.2, seed=3)
        y = op.apply(x0)
        cfg = default_cs_config(0.2, rank=3)
        z, _, rep = reconstruct(y, op, cfg)
        assert rep.converged
        assert np.linalg.norm(y - op.apply(z)) <= 10 * cfg.eps1 * np.linalg.norm(y)
        assert psnr(x0, z)[1] > 25

    def test_factor_orthonormality(self):
        x0 = gen_phantom(16, 16, 8, rank=3, seed=2)
        op = build_operator(16, 16, 8, 0.2, seed=3)
        worst = [0.0]

        def check(state, it):
            for fp in state.factors:
                worst[0] = max(worst[0], np.abs(fp.v.T @ fp.v - np.eye(fp.rank)).max())

        reconstruct(op.apply(x0), op, default_cs_config(0.2, rank=3, max_iters=30), callback=check)
        assert worst[0] <= 1e-8

    def test_rejects_bad_measurements(self):
        op = build_operator(4, 4, 4, 0.5)
        with pytest.raises(ValueError):
            reconstruct(np.zeros(op.m + 1), op)
        bad = np.zeros(op.m)
        bad[0] = np.nan
        with pytest.raises(ValueError):
            reconstruct(bad, op)

    def test_default_config_by_ratio(self):
        low, high = default_cs_config(0.01), default_cs_config(0.05)
        assert (low.rank, high.rank) == (4, 7)
        assert high.tau == pytest.approx(2 * low.tau)
        assert default_cs_config(0.2, tau_scale=1.0).tau == pytest.approx(0.015)
        assert isinstance(low, SolverConfig)
