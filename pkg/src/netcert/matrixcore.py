"""Dense real matrix kernels used throughout the toolkit.

Everything operates on plain 2-D numpy arrays.  Symmetric inputs are
eagerly symmetrized; asymmetry beyond a relative tolerance is an error,
never a warning, because a silently skewed matrix corrupts the SDP
lowering downstream.
"""

from __future__ import annotations

import enum

import numpy as np

DEFAULT_RANK_TOL = 1e-9
DEFAULT_SYM_TOL = 1e-10
DEFAULT_COND_LIMIT = 1e12


class MatrixError(ValueError):
    pass


class AsymmetricMatrixError(MatrixError):
    pass


class IllConditionedError(MatrixError):
    pass


class Definiteness(enum.Enum):
    PD = "positive definite"
    PSD = "positive semidefinite"
    ND = "negative definite"
    NSD = "negative semidefinite"
    INDEF = "indefinite"


def as_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise MatrixError(f"expected a 2-D array, got shape {M.shape}")
    return M


def symmetrize(S, tol: float = DEFAULT_SYM_TOL) -> np.ndarray:
    """Return (S + S^T)/2 after checking the symmetry defect.

    The defect is measured relative to 1 + max|S| so that the zero matrix
    and tiny matrices are not rejected by rounding noise.
    """
    S = as_matrix(S)
    if S.shape[0] != S.shape[1]:
        raise AsymmetricMatrixError(f"not square: {S.shape}")
    scale = 1.0 + np.abs(S).max(initial=0.0)
    defect = np.abs(S - S.T).max(initial=0.0)
    if defect > tol * scale:
        raise AsymmetricMatrixError(
            f"symmetry defect {defect:.3e} exceeds {tol:.1e} * {scale:.3e}"
        )
    return 0.5 * (S + S.T)


def kernel_basis(M, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis of ker(M) via SVD thresholding.

    Columns count cols(M) - rank(M); an empty basis (zero columns) is a
    valid result for full column rank.
    """
    M = as_matrix(M)
    if M.size == 0:
        return np.eye(M.shape[1])
    if rank_tol <= 0:
        raise MatrixError("rank_tol must be positive")
    _, svals, Vt = np.linalg.svd(M)
    cutoff = rank_tol * (svals[0] if svals.size else 0.0)
    rank = int(np.sum(svals > cutoff))
    return Vt[rank:].T.copy()


def left_annihilator(M, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis N of ker(M^T), i.e. M^T N = 0."""
    return kernel_basis(as_matrix(M).T, rank_tol)


def numerical_rank(M, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    M = as_matrix(M)
    if M.size == 0:
        return 0
    svals = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(svals > rank_tol * svals[0]))


def sym_inverse(S, cond_limit: float = DEFAULT_COND_LIMIT) -> np.ndarray:
    """Inverse of a symmetric matrix, symmetrized.

    Raises IllConditionedError when the condition estimate exceeds
    cond_limit: past that point the dual parameterization built from the
    inverse is numerically meaningless.
    """
    S = symmetrize(S)
    if S.shape[0] == 0:
        return S.copy()
    eigvals = np.linalg.eigvalsh(S)
    small = np.abs(eigvals).min()
    big = np.abs(eigvals).max()
    if small == 0.0 or big / small > cond_limit:
        cond = np.inf if small == 0.0 else big / small
        raise IllConditionedError(
            f"condition number {cond:.3e} exceeds limit {cond_limit:.1e}"
        )
    inv = np.linalg.inv(S)
    return 0.5 * (inv + inv.T)


def definiteness(S, tol: float = 1e-9) -> Definiteness:
    """Classify a symmetric matrix by eigenvalue signs.

    The threshold is tol * max(1, ||S||_2); eigenvalues inside the band
    count as zero.  An empty matrix is vacuously PD.
    """
    S = symmetrize(S)
    if S.shape[0] == 0:
        return Definiteness.PD
    eigvals = np.linalg.eigvalsh(S)
    bound = tol * max(1.0, np.abs(eigvals).max())
    pos = eigvals > bound
    neg = eigvals < -bound
    if pos.all():
        return Definiteness.PD
    if neg.all():
        return Definiteness.ND
    if pos.any() and neg.any():
        return Definiteness.INDEF
    if neg.any():
        return Definiteness.NSD
    if pos.any():
        return Definiteness.PSD
    # all eigenvalues inside the zero band: PSD and NSD both hold; report PSD
    return Definiteness.PSD


def congruence(T, S) -> np.ndarray:
    """T^T S T, exactly symmetrized."""
    T = as_matrix(T)
    S = symmetrize(S)
    if T.shape[0] != S.shape[0]:
        raise MatrixError(
            f"congruence dimension mismatch: T is {T.shape}, S is {S.shape}"
        )
    R = T.T @ S @ T
    return 0.5 * (R + R.T)


def block_assemble(layout) -> np.ndarray:
    """Assemble a dense matrix from a grid of blocks.

    Each entry is an array (zero-sized blocks allowed); per-row heights
    and per-column widths must be consistent.
    """
    if not layout or not layout[0]:
        raise MatrixError("empty block layout")
    rows = [[as_matrix(b) for b in row] for row in layout]
    ncols = len(rows[0])
    if any(len(row) != ncols for row in rows):
        raise MatrixError("ragged block layout")
    heights = [row[0].shape[0] for row in rows]
    widths = [b.shape[1] for b in rows[0]]
    for i, row in enumerate(rows):
        for j, b in enumerate(row):
            if b.shape != (heights[i], widths[j]):
                raise MatrixError(
                    f"block ({i},{j}) has shape {b.shape}, expected "
                    f"({heights[i]},{widths[j]})"
                )
    return np.block(rows) if sum(heights) and sum(widths) else np.zeros(
        (sum(heights), sum(widths))
    )
