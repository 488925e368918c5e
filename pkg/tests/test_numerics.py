import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minmax_bounds.numerics import (
    AsymmetricMatrixError,
    is_pd,
    is_psd,
    null_bases,
    smat,
    spectral_radius,
    svec,
    svec_dim,
    sym_eig,
    symmetrize,
)
from tests.conftest import DEMO_B, DEMO_Q0


def random_sym(rng, k):
    A = rng.standard_normal((k, k))
    return 0.5 * (A + A.T)


class TestSymEig:
    def test_diagonal(self):
        spec = sym_eig(np.diag([3.0, 1.0, 2.0]))
        assert np.allclose(spec.eigenvalues, [1.0, 2.0, 3.0])
        # eigenvectors recover the permuted identity up to sign
        assert np.allclose(np.abs(spec.eigenvectors), np.eye(3)[:, [1, 2, 0]])

    def test_construct_then_decompose(self):
        rng = np.random.default_rng(0)
        # random orthogonal via QR
        Qmat, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        lam = np.sort(rng.standard_normal(6))
        A = (Qmat * lam) @ Qmat.T
        spec = sym_eig(A)
        assert np.allclose(spec.eigenvalues, lam, atol=1e-10)
        assert np.linalg.norm(spec.reconstruct() - A) <= 1e-10 * np.linalg.norm(A)

    def test_scalar(self):
        spec = sym_eig(np.array([[-4.2]]))
        assert spec.eigenvalues[0] == pytest.approx(-4.2)

    def test_orthonormal_vectors(self):
        rng = np.random.default_rng(3)
        spec = sym_eig(random_sym(rng, 8))
        V = spec.eigenvectors
        assert np.linalg.norm(V.T @ V - np.eye(8)) < 1e-12

    def test_rejects_asymmetric(self):
        with pytest.raises(AsymmetricMatrixError):
            symmetrize(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_rejects_nonsquare(self):
        with pytest.raises(ValueError):
            sym_eig(np.ones((2, 3)))


class TestNullBases:
    def test_single_column(self):
        nb = null_bases(np.array([[1.0], [0.0]]))
        assert np.allclose(np.abs(nb.N.ravel()), [0.0, 1.0])
        assert np.allclose(np.abs(nb.M.ravel()), [1.0, 0.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_defining_properties(self, seed):
        rng = np.random.default_rng(seed)
        B = rng.standard_normal((6, rng.integers(1, 6)))
        nb = null_bases(B)
        T = np.hstack([nb.N, nb.M])
        assert T.shape == (6, 6)
        assert np.linalg.norm(nb.N.T @ B) <= 1e-12 * np.linalg.norm(B)
        assert np.linalg.norm(T.T @ T - np.eye(6)) <= 1e-12

    def test_projection_identity(self):
        rng = np.random.default_rng(7)
        B = rng.standard_normal((5, 2))
        nb = null_bases(B)
        proj = nb.N @ nb.N.T + nb.M @ nb.M.T
        assert np.linalg.norm(proj - np.eye(5)) <= 1e-10

    def test_demo_input_map(self):
        nb = null_bases(DEMO_B)
        assert nb.N.shape == (4, 2)
        assert nb.M.shape == (4, 2)

    def test_deterministic(self):
        B = np.arange(12, dtype=float).reshape(4, 3)
        a = null_bases(B)
        b = null_bases(B)
        assert np.array_equal(a.N, b.N) and np.array_equal(a.M, b.M)


class TestDefiniteness:
    def test_identity_pd(self):
        assert is_pd(np.eye(3), 1e-12)

    def test_indefinite_not_psd(self):
        assert not is_psd(np.diag([1.0, -1.0]), 1e-12)

    def test_demo_state_cost_pd(self):
        # oracle: smallest eigenvalue of the embedded cost matrix is positive
        assert np.linalg.eigvalsh(DEMO_Q0)[0] > 0
        assert is_pd(DEMO_Q0, 1e-9)

    def test_pd_implies_psd(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            A = random_sym(rng, 4)
            if is_pd(A, 1e-9):
                assert is_psd(A, 1e-9)

    def test_zero_matrix(self):
        assert is_psd(np.zeros((2, 2)))
        assert not is_pd(np.zeros((2, 2)))


class TestSpectralRadius:
    def test_scalar(self):
        assert spectral_radius(np.array([[0.5]])) == pytest.approx(0.5)

    def test_rotation(self):
        th = 0.7
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        assert spectral_radius(R) == pytest.approx(1.0)

    def test_normalized_random(self):
        rng = np.random.default_rng(5)
        A = rng.standard_normal((7, 7))
        # power-iteration oracle on A'A gives the dominant |eigenvalue| after
        # normalizing by twice the spectral radius
        rho = spectral_radius(A)
        assert spectral_radius(A / (2 * rho)) == pytest.approx(0.5, abs=1e-8)


class TestSvec:
    def test_identity_2x2(self):
        assert np.allclose(svec(np.eye(2)), [1.0, 0.0, 1.0])

    def test_trace_inner_product(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            A = random_sym(rng, 5)
            B = random_sym(rng, 5)
            assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B), rel=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(9)
        A = random_sym(rng, 6)
        assert np.allclose(smat(svec(A)), A, atol=1e-14)

    def test_dimension(self):
        assert svec_dim(4) == 10
        assert svec(np.eye(4)).size == 10

    def test_bad_length(self):
        with pytest.raises(ValueError):
            smat(np.ones(4))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31 - 1))
    def test_linearity(self, k, a, b, seed):
        rng = np.random.default_rng(seed)
        A = random_sym(rng, k)
        B = random_sym(rng, k)
        lhs = svec(a * A + b * B)
        rhs = a * svec(A) + b * svec(B)
        assert np.linalg.norm(lhs - rhs) <= 1e-14 * max(1.0, np.linalg.norm(rhs))
