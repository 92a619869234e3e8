"""Initialization strategies for Kronecker factors imported from dense weights.

Two strategies beyond the plain decomposition:

* norm-preserving rescaling: the plain decomposition loses Frobenius mass
  (the truncated tail), which shifts signal magnitudes of a pre-trained
  network. Rescaling by alpha = |W|_F / |W_hat|_F restores the norm
  exactly; with multiple factors the alpha goes into every per-factor
  scalar.
* pruning-based: keep every ``keep_every``-th row of W as factor A and use
  the column vector [1, eps, ..., eps]^T as factor B. With eps = 0 this is
  exactly W with the non-kept rows zeroed; a small eps keeps the dropped
  rows trainable. No SVD involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import ShapeError
from .kron_core import FactorPair, KroneckerSum, materialize
from .vanloan import kronecker_decompose

__all__ = ["NormReport", "normalized_vl_init", "pruning_init", "norm_report"]


@dataclass(frozen=True)
class NormReport:
    """Norm comparison between a dense matrix and its factorized stand-in."""

    frob_original: float
    frob_approx: float
    alpha: float
    l1_original: float
    l1_approx: float
    ratio_percent: float

    def to_dict(self) -> dict:
        return {
            "frob_original": self.frob_original,
            "frob_approx": self.frob_approx,
            "alpha": self.alpha,
            "l1_original": self.l1_original,
            "l1_approx": self.l1_approx,
            "ratio_percent": self.ratio_percent,
        }


def norm_report(w: np.ndarray, ksum: KroneckerSum) -> NormReport:
    """Compare W against materialize(ksum). alpha is inf for a zero approx
    of a nonzero W."""
    if w.shape != (ksum.target_rows, ksum.target_cols):
        raise ShapeError(
            f"matrix shape {w.shape} does not match sum shape "
            f"({ksum.target_rows}, {ksum.target_cols})"
        )
    approx = materialize(ksum)
    fo = linalg.frobenius_norm(w)
    fa = linalg.frobenius_norm(approx)
    if fa > 0.0:
        alpha = fo / fa
    else:
        alpha = 1.0 if fo == 0.0 else float("inf")
    ratio = 100.0 * fa / fo if fo > 0.0 else float("nan")
    return NormReport(
        frob_original=fo,
        frob_approx=fa,
        alpha=alpha,
        l1_original=linalg.l1_norm(w),
        l1_approx=linalg.l1_norm(approx),
        ratio_percent=ratio,
    )


def normalized_vl_init(
    w: np.ndarray, m1: int, n1: int, k: int = 1
) -> tuple[KroneckerSum, NormReport]:
    """Decompose W, then set every factor's scalar to alpha so the
    materialized result has exactly W's Frobenius norm."""
    if not np.any(w):
        raise ValueError("cannot norm-preserve a zero matrix")
    ksum = kronecker_decompose(w, m1, n1, k)
    report = norm_report(w, ksum)
    alpha = report.alpha
    rescaled = KroneckerSum(
        factors=tuple(
            FactorPair(scale=np.asarray(alpha), a=f.a, b=f.b) for f in ksum.factors
        )
    )
    return rescaled, report


def pruning_init(w: np.ndarray, keep_every: int = 2, epsilon: float = 0.1) -> KroneckerSum:
    """Row-striding initialization: A = kept rows, B = [1, eps, ..., eps]^T.

    Row i*keep_every of the materialization equals row i*keep_every of W;
    the keep_every-1 rows after it are eps copies of it (zero for eps = 0,
    reproducing the hard alternating-row mask).
    """
    if keep_every < 1 or w.shape[0] % keep_every != 0:
        raise ValueError(f"keep_every={keep_every} does not divide rows={w.shape[0]}")
    a = np.ascontiguousarray(w[::keep_every, :])
    b = np.full((keep_every, 1), epsilon)
    b[0, 0] = 1.0
    return KroneckerSum(factors=(FactorPair(scale=np.asarray(1.0), a=a, b=b),))
