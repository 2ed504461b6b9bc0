import numpy as np
import pytest
from numpy.testing import assert_allclose

from netcert import matrixcore as mc
from netcert.matrixcore import Definiteness


class TestKernelBasis:
    def test_identity_has_trivial_kernel(self):
        K = mc.kernel_basis(np.eye(2), 1e-9)
        assert K.shape == (2, 0)

    def test_single_row(self):
        K = mc.kernel_basis(np.array([[1.0, 0.0]]), 1e-9)
        assert K.shape == (2, 1)
        assert_allclose(np.abs(K), [[0.0], [1.0]], atol=1e-12)

    def test_random_full_row_rank(self):
        rng = np.random.default_rng(0)
        M = rng.standard_normal((3, 5))
        svals = np.linalg.svd(M, compute_uv=False)
        assert svals.min() > 1e-6  # oracle: numerically full row rank
        K = mc.kernel_basis(M, 1e-9)
        assert K.shape == (5, 2)
        assert np.abs(M @ K).max() <= 1e-10 * np.abs(M).max()
        assert_allclose(K.T @ K, np.eye(2), atol=1e-10)

    def test_stack_roundtrip_rank(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            M = rng.standard_normal((rng.integers(1, 5), rng.integers(2, 7)))
            K = mc.kernel_basis(M)
            stacked = np.vstack([M, K.T])
            assert mc.numerical_rank(stacked) == M.shape[1]


class TestLeftAnnihilator:
    def test_column_vector(self):
        N = mc.left_annihilator(np.array([[1.0], [0.0]]))
        assert_allclose(np.abs(N), [[0.0], [1.0]], atol=1e-12)

    def test_square_invertible_empty(self):
        N = mc.left_annihilator(np.array([[2.0, 1.0], [0.0, 1.0]]))
        assert N.shape == (2, 0)

    def test_random_tall(self):
        rng = np.random.default_rng(2)
        M = rng.standard_normal((6, 3))
        N = mc.left_annihilator(M)
        assert N.shape == (6, 3)
        assert np.abs(M.T @ N).max() <= 1e-10
        assert_allclose(N.T @ N, np.eye(3), atol=1e-10)


class TestSymInverse:
    def test_diagonal(self):
        assert_allclose(mc.sym_inverse(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))

    def test_2x2_closed_form(self):
        S = np.array([[2.0, 1.0], [1.0, 2.0]])
        assert_allclose(mc.sym_inverse(S), np.array([[2, -1], [-1, 2]]) / 3.0)

    def test_random_spd_residual(self):
        rng = np.random.default_rng(3)
        G = rng.standard_normal((8, 8))
        S = G @ G.T + 8 * np.eye(8)
        inv = mc.sym_inverse(S)
        assert np.abs(S @ inv - np.eye(8)).max() <= 1e-8

    def test_involution(self):
        rng = np.random.default_rng(4)
        G = rng.standard_normal((6, 6))
        S = G @ G.T + 2 * np.eye(6)
        assert np.linalg.cond(S) < 1e8
        back = mc.sym_inverse(mc.sym_inverse(S))
        assert np.abs(back - S).max() <= 1e-6 * np.abs(S).max()

    def test_ill_conditioned_rejected(self):
        with pytest.raises(mc.IllConditionedError):
            mc.sym_inverse(np.diag([1.0, 1e-15]))

    def test_asymmetric_rejected(self):
        with pytest.raises(mc.AsymmetricMatrixError):
            mc.sym_inverse(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestDefiniteness:
    def test_basics(self):
        assert mc.definiteness(np.eye(3)) is Definiteness.PD
        assert mc.definiteness(np.diag([1.0, -1.0])) is Definiteness.INDEF
        assert mc.definiteness(np.diag([1.0, 0.0]), tol=1e-9) is Definiteness.PSD
        assert mc.definiteness(-np.eye(2)) is Definiteness.ND
        assert mc.definiteness(np.diag([-1.0, 0.0])) is Definiteness.NSD

    def test_negation_duality(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            S = rng.standard_normal((4, 4))
            S = S + S.T
            if mc.definiteness(S) is Definiteness.ND:
                assert mc.definiteness(-S) is Definiteness.PD


class TestCongruence:
    def test_identity(self):
        S = np.array([[2.0, 1.0], [1.0, 3.0]])
        assert_allclose(mc.congruence(np.eye(2), S), S)

    def test_column_sum(self):
        assert_allclose(mc.congruence(np.array([[1.0], [1.0]]), np.eye(2)), [[2.0]])

    def test_matches_triple_product(self):
        rng = np.random.default_rng(6)
        T = rng.standard_normal((5, 3))
        S = rng.standard_normal((5, 5))
        S = S + S.T
        assert_allclose(mc.congruence(T, S), T.T @ S @ T, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(mc.MatrixError):
            mc.congruence(np.eye(3), np.eye(2))

    def test_preserves_pd_under_full_column_rank(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            T = rng.standard_normal((6, 3))
            G = rng.standard_normal((6, 6))
            S = G @ G.T + 6 * np.eye(6)
            assert mc.definiteness(mc.congruence(T, S)) is Definiteness.PD


class TestBlockAssemble:
    def test_single_block(self):
        M = np.arange(6.0).reshape(2, 3)
        assert_allclose(mc.block_assemble([[M]]), M)

    def test_identity_blocks(self):
        out = mc.block_assemble([
            [np.eye(1), np.zeros((1, 2))],
            [np.zeros((2, 1)), np.eye(2)],
        ])
        assert_allclose(out, np.eye(3))

    def test_data_stack_layout(self):
        # shifted-data stack for 2 states, 1 input, horizon 3: entries are
        # placed exactly where the index bookkeeping says they land
        n, m, N = 2, 1, 3
        Xm = np.arange(6.0).reshape(n, N)
        Um = np.arange(10.0, 13.0).reshape(m, N)
        Xp = np.arange(20.0, 26.0).reshape(n, N)
        out = mc.block_assemble([
            [Xm, np.zeros((n, n))],
            [Um, np.zeros((m, n))],
            [Xp, np.eye(n)],
        ])
        assert out.shape == (n + m + n, N + n)
        for i in range(n):
            for k in range(N):
                assert out[i, k] == Xm[i, k]
                assert out[n + m + i, k] == Xp[i, k]
        for k in range(N):
            assert out[n, k] == Um[0, k]
        assert_allclose(out[n + m:, N:], np.eye(n))
        assert_allclose(out[:n + m, N:], 0.0)

    def test_inconsistent_blocks_rejected(self):
        with pytest.raises(mc.MatrixError):
            mc.block_assemble([[np.eye(2), np.eye(3)]])
