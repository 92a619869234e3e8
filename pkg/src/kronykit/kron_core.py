"""Kronecker-product algebra.

A compressed weight is a sum of scaled Kronecker terms

    W = sum_i  s_i * (A_i kron B_i)

with every A_i sharing one shape (m1 x n1) and every B_i sharing (m2 x n2).
The vec convention is ROW-MAJOR throughout: a length n1*n2 vector x maps to
the n1 x n2 matrix X with x[i*n2 + j] == X[i, j], and the product identity
used everywhere is  (A kron B) @ vec(X) == vec(A @ X @ B.T).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

__all__ = [
    "FactorPair",
    "KroneckerSum",
    "single_term",
    "kron",
    "kron_matvec",
    "kron_matmul_batch",
    "materialize",
    "absorb_scalars",
    "DEFAULT_MATERIALIZE_CAP",
]

# Guards against accidental huge materializations in hot paths; override via
# the max_entries argument. 16M entries = 128 MiB at f64.
DEFAULT_MATERIALIZE_CAP = 16_777_216


@dataclass(eq=False)
class FactorPair:
    """One term (s, A, B) of a Kronecker sum.

    ``scale`` is stored as a 0-d float64 array so the trainer can update it
    in place like any other parameter; read it with ``float(pair.scale)``.
    """

    scale: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if self.scale.ndim != 0:
            raise ValueError(f"scale must be a scalar, got shape {self.scale.shape}")
        if not np.isfinite(self.scale):
            raise ValueError("scale must be finite")
        self.a = np.ascontiguousarray(self.a, dtype=np.float64)
        self.b = np.ascontiguousarray(self.b, dtype=np.float64)
        if self.a.ndim != 2 or self.a.size == 0:
            raise ValueError(f"factor A must be a nonempty 2-D matrix, got shape {self.a.shape}")
        if self.b.ndim != 2 or self.b.size == 0:
            raise ValueError(f"factor B must be a nonempty 2-D matrix, got shape {self.b.shape}")


@dataclass(eq=False)
class KroneckerSum:
    """W = sum_i s_i (A_i kron B_i), all factors shape-compatible."""

    factors: tuple[FactorPair, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.factors = tuple(self.factors)
        if not self.factors:
            raise ValueError("KroneckerSum needs at least one factor")
        a0, b0 = self.factors[0].a.shape, self.factors[0].b.shape
        for f in self.factors[1:]:
            if f.a.shape != a0 or f.b.shape != b0:
                raise ShapeError(
                    f"all factors must share shapes {a0} kron {b0}, "
                    f"got {f.a.shape} kron {f.b.shape}"
                )

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def a_shape(self) -> tuple[int, int]:
        return self.factors[0].a.shape

    @property
    def b_shape(self) -> tuple[int, int]:
        return self.factors[0].b.shape

    @property
    def target_rows(self) -> int:
        return self.a_shape[0] * self.b_shape[0]

    @property
    def target_cols(self) -> int:
        return self.a_shape[1] * self.b_shape[1]

    @property
    def param_count(self) -> int:
        """Stored parameters: k*(m1*n1 + m2*n2), plus k scalars unless every
        scale is exactly 1 (the absorbed/implicit-identity form)."""
        m1, n1 = self.a_shape
        m2, n2 = self.b_shape
        n = self.k * (m1 * n1 + m2 * n2)
        if any(float(f.scale) != 1.0 for f in self.factors):
            n += self.k
        return n


def single_term(a: np.ndarray, b: np.ndarray, scale: float = 1.0) -> KroneckerSum:
    """Convenience constructor for a one-factor sum."""
    return KroneckerSum(factors=(FactorPair(scale=np.asarray(scale), a=a, b=b),))


def _check_size(rows: int, cols: int, max_entries: int) -> None:
    if rows * cols > max_entries:
        raise ValueError(
            f"materialized size {rows}x{cols} = {rows * cols} entries "
            f"exceeds cap of {max_entries}; pass max_entries to override"
        )


def kron(a: np.ndarray, b: np.ndarray, *, max_entries: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
    """Kronecker product: entry [(i*m2+p), (j*n2+q)] = a[i,j] * b[p,q]."""
    m1, n1 = a.shape
    m2, n2 = b.shape
    _check_size(m1 * m2, n1 * n2, max_entries)
    out = a[:, None, :, None] * b[None, :, None, :]
    return out.reshape(m1 * m2, n1 * n2)


def materialize(ksum: KroneckerSum, *, max_entries: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
    """Dense sum_i s_i (A_i kron B_i). Guarded by the size cap."""
    _check_size(ksum.target_rows, ksum.target_cols, max_entries)
    out = np.zeros((ksum.target_rows, ksum.target_cols))
    for f in ksum.factors:
        out += float(f.scale) * kron(f.a, f.b, max_entries=max_entries)
    return out


def kron_matvec(ksum: KroneckerSum, x: np.ndarray) -> np.ndarray:
    """materialize(ksum) @ x, without materializing.

    Reshapes x row-major to n1 x n2, computes s_i * A_i @ X @ B_i.T per
    factor, and flattens back. O(m1*n1*n2 + m1*n2*m2) per factor.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != ksum.target_cols:
        raise ShapeError(f"expected vector of length {ksum.target_cols}, got shape {x.shape}")
    n1, n2 = ksum.a_shape[1], ksum.b_shape[1]
    xm = x.reshape(n1, n2)
    out = np.zeros((ksum.target_rows,))
    for f in ksum.factors:
        out += float(f.scale) * (f.a @ xm @ f.b.T).ravel()
    return out


def kron_matmul_batch(ksum: KroneckerSum, xb: np.ndarray) -> np.ndarray:
    """Row-wise kron_matvec over a T x (n1*n2) batch, returning T x (m1*m2)."""
    xb = np.asarray(xb, dtype=np.float64)
    if xb.ndim != 2 or xb.shape[1] != ksum.target_cols:
        raise ShapeError(f"expected batch of shape (T, {ksum.target_cols}), got {xb.shape}")
    t = xb.shape[0]
    n1, n2 = ksum.a_shape[1], ksum.b_shape[1]
    m1, m2 = ksum.a_shape[0], ksum.b_shape[0]
    xt = xb.reshape(t, n1, n2)
    out = np.zeros((t, m1, m2))
    for f in ksum.factors:
        out += float(f.scale) * np.einsum("ij,tjk,lk->til", f.a, xt, f.b, optimize=True)
    return out.reshape(t, ksum.target_rows)


def absorb_scalars(ksum: KroneckerSum) -> KroneckerSum:
    """Fold each scale into its A factor: (s, A, B) -> (1, s*A, B).

    Materialization is unchanged entrywise; the returned sum carries no
    scalar parameters.
    """
    return KroneckerSum(
        factors=tuple(
            FactorPair(scale=np.asarray(1.0), a=float(f.scale) * f.a, b=f.b.copy())
            for f in ksum.factors
        )
    )
