import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import dense_operator, dense_system

from e3dtv.tensor_core import (as_hsi, build_fft_denominator, diff, diff_adjoint,
                               difference_eigenvalues, fold3, solve_x_system, unfold3)

MODES = (1, 2, 3)


small_shapes = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4))


@st.composite
def tensor_pairs(draw):
    shape = draw(small_shapes)
    elems = st.floats(-10, 10, allow_nan=False)
    return draw(arrays(np.float64, shape, elements=elems)), draw(arrays(np.float64, shape, elements=elems))


class TestLayout:
    def test_unfold_row_order(self):
        x = np.arange(24.0).reshape((2, 3, 4))
        m = unfold3(x)
        for i in range(2):
            for j in range(3):
                assert np.array_equal(m[i + 2 * j], x[i, j, :])

    def test_fold_inverts_unfold(self, rng):
        x = rng.standard_normal((3, 5, 2))
        assert np.array_equal(fold3(unfold3(x), x.shape), x)

    def test_fold_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            fold3(np.zeros((5, 2)), (2, 3, 2))

    @pytest.mark.parametrize("bad", [np.zeros((2, 2)), np.zeros((0, 2, 2)),
                                     np.full((2, 2, 2), np.nan)])
    def test_as_hsi_rejects(self, bad):
        with pytest.raises(ValueError):
            as_hsi(bad)


class TestDifferences:
    def test_mode3_enumeration(self):
        x = np.array([1.0, 3.0, 0.0, 2.0]).reshape((1, 1, 4))
        assert diff(x, 3).ravel().tolist() == [-2.0, 3.0, -2.0, 1.0]

    def test_constant_has_zero_gradient(self):
        x = np.full((3, 4, 5), 5.0)
        for n in MODES:
            assert not np.any(diff(x, n))

    def test_impulse_mode1(self):
        x = np.zeros((4, 3, 2))
        x[0, 1, 1] = 1.0
        g = diff(x, 1)
        nz = {tuple(int(v) for v in idx): g[tuple(idx)] for idx in np.argwhere(g)}
        assert nz == {(0, 1, 1): 1.0, (3, 1, 1): -1.0}

    def test_adjoint_of_unit_vector(self):
        g = np.array([1.0, 0.0, 0.0, 0.0]).reshape((1, 1, 4))
        assert diff_adjoint(g, 3).ravel().tolist() == [1.0, -1.0, 0.0, 0.0]

    def test_adjoint_of_zero(self):
        assert not np.any(diff_adjoint(np.zeros((2, 3, 4)), 2))

    def test_adjoint_shape_check(self):
        with pytest.raises(ValueError):
            diff_adjoint(np.zeros((2, 3, 4)), 1, shape=(2, 3, 5))

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            diff(np.zeros((2, 2, 2)), 4)

    @pytest.mark.parametrize("n", MODES)
    def test_adjoint_is_dense_transpose(self, n):
        shape = (3, 4, 2)
        d = dense_operator(lambda x: diff(x, n), shape)
        dt = dense_operator(lambda g: diff_adjoint(g, n), shape)
        assert np.array_equal(dt, d.T)

    @settings(max_examples=60, deadline=None)
    @given(tensor_pairs(), st.sampled_from(MODES))
    def test_adjointness(self, pair, n):
        x, y = pair
        lhs = np.vdot(diff(x, n), y)
        rhs = np.vdot(x, diff_adjoint(y, n))
        scale = max(1.0, np.linalg.norm(x) * np.linalg.norm(y))
        assert abs(lhs - rhs) <= 1e-12 * scale

    @settings(max_examples=60, deadline=None)
    @given(tensor_pairs(), st.sampled_from(MODES),
           st.integers(-3, 3), st.integers(-3, 3))
    def test_linearity(self, pair, n, a, b):
        # small integer coefficients keep float arithmetic exact
        x, y = pair
        x, y = np.round(x), np.round(y)
        assert np.array_equal(diff(a * x + b * y, n), a * diff(x, n) + b * diff(y, n))

    def test_mode3_rank_bound(self, rng):
        for r in (1, 2, 3):
            m = rng.standard_normal((30, r)) @ rng.standard_normal((r, 8))
            x = fold3(m, (5, 6, 8))
            assert np.linalg.matrix_rank(unfold3(diff(x, 3))) <= r


class TestEigenvalues:
    def test_one_dimensional_circulant(self):
        lam = build_fft_denominator(1, 1, 4).ravel()
        assert np.allclose(lam, [0.0, 2.0, 4.0, 2.0], atol=1e-14)

    def test_dc_zero_and_bounds(self):
        lam = build_fft_denominator(5, 6, 7)
        assert lam[0, 0, 0] == 0.0
        assert lam.min() >= -1e-12 and lam.max() <= 12.0 + 1e-12

    def test_matches_dense_spectrum(self):
        shape = (3, 4, 2)
        a = dense_system(shape, (1.0, 1.0, 1.0, 0.0))
        dense = np.sort(np.linalg.eigvalsh(a))
        fft = np.sort(build_fft_denominator(*shape).ravel())
        assert np.allclose(dense, fft, atol=1e-12)

    def test_per_mode_fields(self):
        eig = difference_eigenvalues(4, 1, 1)
        assert np.allclose(eig[0].ravel(), [0, 2, 4, 2])
        assert not np.any(eig[1]) and not np.any(eig[2])


class TestSolver:
    def test_constant_rhs(self):
        x0 = np.full((4, 3, 5), 2.5)
        mu = 0.7
        assert np.allclose(solve_x_system(mu * x0, x0.shape, mu), x0, atol=1e-13)

    @pytest.mark.parametrize("shape", [(4, 4, 3), (1, 1, 7), (2, 5, 3)])
    def test_uniform_matches_dense(self, rng, shape):
        mu = 0.37
        rhs = rng.standard_normal(shape)
        x = solve_x_system(rhs, shape, mu)
        ref = np.linalg.solve(dense_system(shape, (mu,) * 4), rhs.ravel(order="F"))
        assert np.linalg.norm(x.ravel(order="F") - ref) <= 1e-10 * np.linalg.norm(ref)

    def test_weighted_matches_dense(self, rng):
        shape = (3, 4, 2)
        weights = (0.2, 1.5, 0.0, 0.9)
        rhs = rng.standard_normal(shape)
        x = solve_x_system(rhs, shape, weights)
        ref = np.linalg.solve(dense_system(shape, weights), rhs.ravel(order="F"))
        assert np.allclose(x.ravel(order="F"), ref, rtol=1e-10, atol=1e-12)

    def test_unfolded_rhs(self, rng):
        shape = (3, 4, 2)
        rhs = rng.standard_normal(shape)
        a = solve_x_system(rhs, shape, 0.5)
        b = solve_x_system(unfold3(rhs), shape, 0.5)
        assert b.shape == (12, 2)
        assert np.allclose(unfold3(a), b, atol=1e-14)

    def test_homogeneity(self, rng):
        shape = (4, 3, 3)
        rhs = rng.standard_normal(shape)
        assert np.allclose(solve_x_system(rhs, shape, 0.3), solve_x_system(2 * rhs, shape, 0.6),
                           atol=1e-13)

    @pytest.mark.parametrize("mu", [0.0, -1.0, (1.0, 1.0, 1.0, 0.0), (-1.0, 1.0, 1.0, 1.0), (1.0, 2.0)])
    def test_rejects_bad_weights(self, mu):
        with pytest.raises(ValueError):
            solve_x_system(np.ones((2, 2, 2)), (2, 2, 2), mu)

    def test_rejects_non_finite(self):
        rhs = np.ones((2, 2, 2))
        rhs[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            solve_x_system(rhs, (2, 2, 2), 1.0)
