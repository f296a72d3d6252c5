"""Dense linear-algebra kernels shared by the numeric modules.

All matrices are 2-D float64 numpy arrays in row-major order. The SVD here
is a full decomposition (square U and V) with a deterministic sign
convention so that factorizations, checkpoints, and tests are reproducible
bit-for-bit across runs.

``spd_log_oracle`` computes the SPD matrix logarithm through an
eigendecomposition. It is deliberately a different code path from the
SVD-based pooling forward and serves as its independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, NotSpdError, NumericalError, ShapeError

__all__ = [
    "SvdFactors",
    "as_matrix",
    "svd",
    "spd_log_oracle",
    "spd_exp_oracle",
    "sym",
    "hadamard",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite float64 2-D array, validating as we go."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={out.ndim}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ShapeError(f"{name} must have at least one row and column, got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"{name} contains NaN or Inf entries")
    return np.ascontiguousarray(out)


@dataclass(frozen=True)
class SvdFactors:
    """Full SVD of an m x d matrix: U (m x m), S (min(m, d) values,
    descending), V (d x d), such that A = U @ diag_embed(S) @ V.T."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Multiply the factors back together (U Sigma V^T)."""
        m = self.U.shape[0]
        d = self.V.shape[0]
        sigma = np.zeros((m, d))
        r = self.S.shape[0]
        sigma[:r, :r] = np.diag(self.S)
        return self.U @ sigma @ self.V.T


def _fix_column_signs(U: np.ndarray, V: np.ndarray) -> None:
    """Flip factor columns in place so the first nonzero entry of every
    column of U (and of every unpaired column of V) is non-negative.

    Paired columns (index < min(m, d)) flip together to keep the
    reconstruction unchanged; trailing columns of either factor span
    null space directions and may flip freely.
    """
    m = U.shape[1]
    d = V.shape[1]
    r = min(m, d)
    for j in range(r):
        nz = np.flatnonzero(U[:, j])
        if nz.size and U[nz[0], j] < 0.0:
            U[:, j] = -U[:, j]
            V[:, j] = -V[:, j]
    for j in range(r, m):
        nz = np.flatnonzero(U[:, j])
        if nz.size and U[nz[0], j] < 0.0:
            U[:, j] = -U[:, j]
    for j in range(r, d):
        nz = np.flatnonzero(V[:, j])
        if nz.size and V[nz[0], j] < 0.0:
            V[:, j] = -V[:, j]


def svd(A) -> SvdFactors:
    """Full singular value decomposition with deterministic signs.

    Returns square orthogonal U and V and the singular values in
    non-increasing order. Raises ConvergenceError if the underlying
    iteration does not converge.
    """
    A = as_matrix(A, "svd input")
    try:
        U, S, Vh = np.linalg.svd(A, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    U = np.ascontiguousarray(U)
    V = np.ascontiguousarray(Vh.T)
    _fix_column_signs(U, V)
    return SvdFactors(U=U, S=S, V=V)


def spd_log_oracle(S) -> np.ndarray:
    """Matrix logarithm of an SPD matrix via eigendecomposition.

    Requires symmetry within 1e-10 (max absolute asymmetry) and strictly
    positive eigenvalues; raises NotSpdError otherwise. The output is
    explicitly symmetrized to absorb rounding.
    """
    S = as_matrix(S, "spd_log_oracle input")
    if S.shape[0] != S.shape[1]:
        raise ShapeError(f"spd_log_oracle needs a square matrix, got {S.shape}")
    asym = np.max(np.abs(S - S.T))
    if asym > 1e-10:
        raise NotSpdError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    w, Q = np.linalg.eigh(S)
    if np.any(w <= 0.0):
        raise NotSpdError(f"matrix is not positive definite (min eigenvalue {w.min():.3e})")
    out = (Q * np.log(w)) @ Q.T
    return 0.5 * (out + out.T)


def spd_exp_oracle(X) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via eigendecomposition.

    Inverse of ``spd_log_oracle`` up to rounding; used by tests for the
    log/exp round trip.
    """
    X = as_matrix(X, "spd_exp_oracle input")
    if X.shape[0] != X.shape[1]:
        raise ShapeError(f"spd_exp_oracle needs a square matrix, got {X.shape}")
    asym = np.max(np.abs(X - X.T))
    if asym > 1e-10:
        raise NotSpdError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    w, Q = np.linalg.eigh(X)
    out = (Q * np.exp(w)) @ Q.T
    return 0.5 * (out + out.T)


def sym(A) -> np.ndarray:
    """Symmetric part (A + A^T) / 2 of a square matrix."""
    A = as_matrix(A, "sym input")
    if A.shape[0] != A.shape[1]:
        raise ShapeError(f"sym needs a square matrix, got {A.shape}")
    return 0.5 * (A + A.T)


def hadamard(A, B) -> np.ndarray:
    """Entrywise product of two same-shape matrices."""
    A = as_matrix(A, "hadamard A")
    B = as_matrix(B, "hadamard B")
    if A.shape != B.shape:
        raise ShapeError(f"hadamard needs identical shapes, got {A.shape} and {B.shape}")
    return A * B
