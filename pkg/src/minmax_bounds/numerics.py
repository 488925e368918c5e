"""Dense symmetric linear-algebra utilities used by the Riccati and SDP layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DEFAULT_TOLERANCES

__all__ = [
    "AsymmetricMatrixError",
    "NullBases",
    "SymSpectrum",
    "symmetrize",
    "sym_eig",
    "null_bases",
    "is_psd",
    "is_pd",
    "spectral_radius",
    "svec",
    "smat",
    "svec_dim",
    "sym_sqrt",
    "psd_factor",
]

SQRT2 = np.sqrt(2.0)


class AsymmetricMatrixError(ValueError):
    """Input claimed symmetric differs from its transpose beyond tolerance."""


def symmetrize(A, rtol=None):
    """Return (A + A')/2, rejecting inputs that are materially asymmetric."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    rtol = DEFAULT_TOLERANCES.sym_rtol if rtol is None else rtol
    scale = np.linalg.norm(A)
    if scale > 0 and np.linalg.norm(A - A.T) > rtol * scale:
        raise AsymmetricMatrixError(
            f"matrix is asymmetric: ||A - A'|| = {np.linalg.norm(A - A.T):.3e} "
            f"exceeds {rtol:.1e} * ||A||"
        )
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class SymSpectrum:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        V = self.eigenvectors
        return (V * self.eigenvalues) @ V.T


def sym_eig(A, rtol=None) -> SymSpectrum:
    """Symmetric eigendecomposition (ascending) after symmetrizing the input."""
    A = symmetrize(A, rtol)
    w, V = np.linalg.eigh(A)
    return SymSpectrum(eigenvalues=w, eigenvectors=V)


@dataclass(frozen=True)
class NullBases:
    """Orthonormal bases N (null space of B') and M (range of B)."""

    N: np.ndarray
    M: np.ndarray


def null_bases(B, rank_rtol=None) -> NullBases:
    """Split R^n into range(B) and null(B') with orthonormal bases.

    Deterministic for a given input: signs are canonicalized so the entry of
    largest magnitude in each column is positive.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    rank_rtol = DEFAULT_TOLERANCES.rank_rtol if rank_rtol is None else rank_rtol
    n = B.shape[0]
    U, s, _ = np.linalg.svd(B, full_matrices=True)
    rank = int(np.sum(s > rank_rtol * (s[0] if s.size else 0.0)))
    M = U[:, :rank].copy()
    N = U[:, rank:].copy()
    for Mat in (N, M):
        for j in range(Mat.shape[1]):
            k = np.argmax(np.abs(Mat[:, j]))
            if Mat[k, j] < 0:
                Mat[:, j] = -Mat[:, j]
    return NullBases(N=N, M=M)


def _eig_extremes(A):
    A = symmetrize(A)
    w = np.linalg.eigvalsh(A)
    return w[0], w[-1]


def is_psd(A, tol=None) -> bool:
    """Min eigenvalue >= -tol * ||A||."""
    tol = DEFAULT_TOLERANCES.psd_rtol if tol is None else tol
    lo, hi = _eig_extremes(A)
    scale = max(abs(lo), abs(hi))
    return lo >= -tol * scale


def is_pd(A, tol=None) -> bool:
    """Min eigenvalue >= +tol * ||A|| (zero matrices are not PD)."""
    tol = DEFAULT_TOLERANCES.psd_rtol if tol is None else tol
    lo, hi = _eig_extremes(A)
    scale = max(abs(lo), abs(hi))
    if scale == 0.0:
        return False
    return lo >= tol * scale


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def svec_dim(k: int) -> int:
    return k * (k + 1) // 2


def _tri_order(length: int) -> int:
    """Matrix order k with k(k+1)/2 == length, or raise."""
    k = int((np.sqrt(8 * length + 1) - 1) / 2 + 0.5)
    if svec_dim(k) != length:
        raise ValueError(f"length {length} is not a triangular number")
    return k


def svec_indices(k: int):
    """Row/col index arrays for the upper triangle in svec order."""
    rows, cols = np.triu_indices(k)
    return rows, cols


def svec(A) -> np.ndarray:
    """Pack a symmetric k x k matrix into a length k(k+1)/2 vector.

    Off-diagonal entries are scaled by sqrt(2) so svec(A) . svec(B) = Tr(AB).
    """
    A = symmetrize(A)
    k = A.shape[0]
    rows, cols = svec_indices(k)
    v = A[rows, cols].astype(float, copy=True)
    v[rows != cols] *= SQRT2
    return v


def smat(v) -> np.ndarray:
    """Inverse of svec."""
    v = np.asarray(v, dtype=float).ravel()
    k = _tri_order(v.size)
    rows, cols = svec_indices(k)
    A = np.zeros((k, k))
    vals = v.copy()
    off = rows != cols
    vals[off] /= SQRT2
    A[rows, cols] = vals
    A[cols, rows] = vals
    return A


def sym_sqrt(A, floor=0.0) -> np.ndarray:
    """Symmetric square root of a PSD matrix (eigenvalues clipped at floor)."""
    spec = sym_eig(A)
    w = np.clip(spec.eigenvalues, floor, None)
    V = spec.eigenvectors
    return (V * np.sqrt(w)) @ V.T


def psd_factor(A, tol=None) -> np.ndarray:
    """A full-rank-checked Cholesky-style factor L' with A = L L'.

    Raises np.linalg.LinAlgError when A is not positive definite, which makes
    the attempt usable as a PD oracle in tests.
    """
    A = symmetrize(A, rtol=tol)
    return np.linalg.cholesky(A)
