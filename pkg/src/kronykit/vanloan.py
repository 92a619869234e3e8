"""Nearest-Kronecker-product decomposition via the rearrangement trick.

For W of shape (m1*m2, n1*n2), permuting entries into R of shape
(m1*n1, m2*n2) turns the best-Frobenius Kronecker approximation problem
into an ordinary low-rank approximation of R: each rank-1 term of R's SVD
reshapes into one (A_i, B_i) factor pair, with sqrt(sigma_i) split evenly
between the two sides.

The normative index map (row-major everywhere):

    R[i*n1 + j, p*n2 + q] = W[i*m2 + p, j*n2 + q]

for i in [0, m1), j in [0, n1), p in [0, m2), q in [0, n2). Equivalently,
row i*n1+j of R is the flattened (m2 x n2) block of W at block position
(i, j), so an exact Kronecker product W = A kron B rearranges to the rank-1
outer product vec(A) vec(B)^T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import ShapeError
from .kron_core import FactorPair, KroneckerSum, materialize

__all__ = [
    "RearrangedMatrix",
    "rearrange",
    "inverse_rearrange",
    "kronecker_decompose",
    "reconstruction_error",
]


@dataclass(frozen=True)
class RearrangedMatrix:
    """Entry permutation of a source matrix, plus the factor-shape metadata
    needed to undo it."""

    r: np.ndarray
    m1: int
    n1: int
    m2: int
    n2: int


def _split_dims(w: np.ndarray, m1: int, n1: int) -> tuple[int, int]:
    rows, cols = w.shape
    if m1 < 1 or rows % m1 != 0:
        raise ValueError(f"m1={m1} does not divide rows={rows}")
    if n1 < 1 or cols % n1 != 0:
        raise ValueError(f"n1={n1} does not divide cols={cols}")
    return rows // m1, cols // n1


def rearrange(w: np.ndarray, m1: int, n1: int) -> RearrangedMatrix:
    """Permute W (m1*m2 x n1*n2) into R (m1*n1 x m2*n2); see module docs."""
    m2, n2 = _split_dims(w, m1, n1)
    r = w.reshape(m1, m2, n1, n2).transpose(0, 2, 1, 3).reshape(m1 * n1, m2 * n2)
    return RearrangedMatrix(r=np.ascontiguousarray(r), m1=m1, n1=n1, m2=m2, n2=n2)


def inverse_rearrange(rm: RearrangedMatrix) -> np.ndarray:
    """Undo ``rearrange``, recovering the original (m1*m2 x n1*n2) matrix."""
    m1, n1, m2, n2 = rm.m1, rm.n1, rm.m2, rm.n2
    w = rm.r.reshape(m1, n1, m2, n2).transpose(0, 2, 1, 3).reshape(m1 * m2, n1 * n2)
    return np.ascontiguousarray(w)


def kronecker_decompose(w: np.ndarray, m1: int, n1: int, k: int = 1) -> KroneckerSum:
    """Best Frobenius rank-k Kronecker approximation of W.

    Factor i is A_i = reshape(sqrt(s_i) * U[:, i], (m1, n1)) and
    B_i = reshape(sqrt(s_i) * V[:, i], (m2, n2)), every scale 1. Output is
    deterministic thanks to thin_svd's sign convention.
    """
    m2, n2 = _split_dims(w, m1, n1)
    max_k = min(m1 * n1, m2 * n2)
    if not 1 <= k <= max_k:
        raise ValueError(f"k={k} out of range [1, {max_k}] for factor shapes "
                         f"({m1}, {n1}) kron ({m2}, {n2})")
    rm = rearrange(w, m1, n1)
    svd = linalg.thin_svd(rm.r, k)
    factors = []
    for i in range(k):
        root = np.sqrt(svd.s[i])
        a = (root * svd.u[:, i]).reshape(m1, n1)
        b = (root * svd.v[:, i]).reshape(m2, n2)
        factors.append(FactorPair(scale=np.asarray(1.0), a=a, b=b))
    return KroneckerSum(factors=tuple(factors))


def reconstruction_error(w: np.ndarray, ksum: KroneckerSum) -> float:
    """Frobenius norm of W - materialize(ksum)."""
    if w.shape != (ksum.target_rows, ksum.target_cols):
        raise ShapeError(
            f"target shape {w.shape} does not match sum shape "
            f"({ksum.target_rows}, {ksum.target_cols})"
        )
    return linalg.frobenius_norm(w - materialize(ksum))
