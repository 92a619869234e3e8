"""Dense linear-algebra kernel used by every other module.

Matrices are plain 2-D ``numpy.ndarray`` objects in float64, row-major.
``as_matrix`` is the validating constructor for data that crosses a trust
boundary (files, decomposition output); internal call sites pass arrays
straight through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

__all__ = [
    "as_matrix",
    "matmul",
    "frobenius_norm",
    "l1_norm",
    "thin_svd",
    "numerical_rank",
    "SvdResult",
]


def as_matrix(data, *, name: str = "matrix") -> np.ndarray:
    """Validate and normalize ``data`` into a float64, C-order, 2-D array.

    Raises ValueError if the result is not 2-D with positive dimensions, or
    contains non-finite entries.
    """
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must have positive dimensions, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` with an explicit shape check."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm(a: np.ndarray) -> float:
    """sqrt of the sum of squared entries."""
    return float(np.linalg.norm(a))


def l1_norm(a: np.ndarray) -> float:
    """Sum of absolute entries (entrywise l1, not the induced norm)."""
    return float(np.abs(a).sum())


@dataclass(frozen=True)
class SvdResult:
    """Top-r singular triplets: ``u @ diag(s) @ v.T`` approximates the input.

    u has orthonormal columns (rows x r), s is descending and nonnegative,
    v has orthonormal columns (cols x r).
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return len(self.s)

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def thin_svd(a: np.ndarray, k: int) -> SvdResult:
    """Top-k singular triplets of ``a``.

    Backed by LAPACK's dense SVD; the contract here is accuracy, not
    method. Signs are fixed so the largest-magnitude entry of each u column
    is positive, which makes outputs reproducible.
    """
    max_k = min(a.shape)
    if not 1 <= k <= max_k:
        raise ValueError(f"k={k} out of range [1, {max_k}] for shape {a.shape}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u = np.ascontiguousarray(u[:, :k])
    s = np.ascontiguousarray(s[:k])
    v = np.ascontiguousarray(vt[:k].T)
    # Deterministic sign: largest-|entry| of each u column made positive.
    for j in range(k):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(u=u, s=s, v=v)


def numerical_rank(a: np.ndarray, tol: float | None = None) -> int:
    """Number of singular values above ``tol``.

    Default tol is ``max(rows, cols) * sigma_1 * eps``, the usual
    rank-revealing threshold.
    """
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    if tol is None:
        tol = max(a.shape) * s[0] * np.finfo(np.float64).eps
    elif tol < 0:
        raise ValueError(f"tol must be nonnegative, got {tol}")
    return int(np.count_nonzero(s > tol))
