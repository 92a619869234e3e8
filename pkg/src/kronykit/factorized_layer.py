"""Two-matrix FFN block whose weights are Kronecker sums.

Orientation is y = W x with W: out x in, so a batch row t maps through
x -> GELU(W_in x + b_in) -> W_out h + b_out. Both products run through the
materialization-free batch kernel. GELU is the exact erf form.

Gradients: for one factor term Y_t = s * A X_t B^T with upstream G_t,

    dA = s * sum_t G_t B X_t^T          dB = s * sum_t G_t^T A X_t
    ds = sum_t <G_t, A X_t B^T>         dX_t = s * A^T G_t B

composed through the activation and both layers by the chain rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from . import init_strategies, vanloan
from .errors import ShapeError
from .kron_core import KroneckerSum, kron_matmul_batch

__all__ = [
    "FactorizedFFN",
    "FactorGrad",
    "GradientBundle",
    "gelu",
    "gelu_grad",
    "ffn_forward",
    "ffn_backward",
    "import_dense",
    "ffn_param_count",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU: x * Phi(x) with the Gaussian CDF, no tanh approximation."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx GELU(x) = Phi(x) + x * phi(x)."""
    phi = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


@dataclass(eq=False)
class FactorizedFFN:
    """w_in: (hidden x d) sum, w_out: (d x hidden) sum, dense biases."""

    w_in: KroneckerSum
    b_in: np.ndarray
    w_out: KroneckerSum
    b_out: np.ndarray

    def __post_init__(self):
        self.b_in = np.ascontiguousarray(self.b_in, dtype=np.float64)
        self.b_out = np.ascontiguousarray(self.b_out, dtype=np.float64)
        if self.w_in.target_rows != self.w_out.target_cols or \
                self.w_in.target_cols != self.w_out.target_rows:
            raise ShapeError(
                f"w_out target ({self.w_out.target_rows}, {self.w_out.target_cols}) "
                f"must transpose w_in target ({self.w_in.target_rows}, {self.w_in.target_cols})"
            )
        if self.b_in.shape != (self.w_in.target_rows,):
            raise ShapeError(f"b_in shape {self.b_in.shape} != ({self.w_in.target_rows},)")
        if self.b_out.shape != (self.w_out.target_rows,):
            raise ShapeError(f"b_out shape {self.b_out.shape} != ({self.w_out.target_rows},)")

    @property
    def d_model(self) -> int:
        return self.w_in.target_cols

    @property
    def hidden(self) -> int:
        return self.w_in.target_rows


@dataclass(eq=False)
class FactorGrad:
    """Gradient for one (s, A, B) term; shapes mirror the parameters."""

    d_a: np.ndarray
    d_b: np.ndarray
    d_s: float


@dataclass(eq=False)
class GradientBundle:
    d_w_in: list[FactorGrad]
    d_b_in: np.ndarray
    d_w_out: list[FactorGrad]
    d_b_out: np.ndarray
    d_x: np.ndarray


def _sum_forward_batch(ksum: KroneckerSum, xb: np.ndarray) -> np.ndarray:
    return kron_matmul_batch(ksum, xb)


def _sum_backward_batch(
    ksum: KroneckerSum, xb: np.ndarray, gb: np.ndarray
) -> tuple[list[FactorGrad], np.ndarray]:
    """Parameter and input gradients of gb-weighted kron_matmul_batch."""
    t = xb.shape[0]
    n1, n2 = ksum.a_shape[1], ksum.b_shape[1]
    m1, m2 = ksum.a_shape[0], ksum.b_shape[0]
    xt = xb.reshape(t, n1, n2)
    gt = gb.reshape(t, m1, m2)
    grads = []
    dx = np.zeros_like(xt)
    for f in ksum.factors:
        s = float(f.scale)
        # Unscaled per-factor output, reused for the scalar gradient.
        y = np.einsum("ij,tjk,lk->til", f.a, xt, f.b, optimize=True)
        d_s = float(np.einsum("til,til->", gt, y, optimize=True))
        d_a = s * np.einsum("tab,bc,tdc->ad", gt, f.b, xt, optimize=True)
        d_b = s * np.einsum("tab,ac,tcd->bd", gt, f.a, xt, optimize=True)
        dx += s * np.einsum("ai,tab,bj->tij", f.a, gt, f.b, optimize=True)
        grads.append(FactorGrad(d_a=d_a, d_b=d_b, d_s=d_s))
    return grads, dx.reshape(t, n1 * n2)


def ffn_forward(ffn: FactorizedFFN, xb: np.ndarray) -> np.ndarray:
    """GELU(Xb W_in^T + b_in) W_out^T + b_out for a T x d batch."""
    xb = np.asarray(xb, dtype=np.float64)
    if xb.ndim != 2 or xb.shape[1] != ffn.d_model:
        raise ShapeError(f"expected batch of shape (T, {ffn.d_model}), got {xb.shape}")
    z = _sum_forward_batch(ffn.w_in, xb) + ffn.b_in
    h = gelu(z)
    return _sum_forward_batch(ffn.w_out, h) + ffn.b_out


def ffn_backward(ffn: FactorizedFFN, xb: np.ndarray, upstream: np.ndarray) -> GradientBundle:
    """Gradients of sum(upstream * ffn_forward(ffn, xb)) w.r.t. everything."""
    xb = np.asarray(xb, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if xb.ndim != 2 or xb.shape[1] != ffn.d_model:
        raise ShapeError(f"expected batch of shape (T, {ffn.d_model}), got {xb.shape}")
    if upstream.shape != (xb.shape[0], ffn.d_model):
        raise ShapeError(
            f"upstream shape {upstream.shape} != ({xb.shape[0]}, {ffn.d_model})"
        )
    z = _sum_forward_batch(ffn.w_in, xb) + ffn.b_in
    h = gelu(z)

    d_b_out = upstream.sum(axis=0)
    d_w_out, d_h = _sum_backward_batch(ffn.w_out, h, upstream)
    d_z = d_h * gelu_grad(z)
    d_b_in = d_z.sum(axis=0)
    d_w_in, d_x = _sum_backward_batch(ffn.w_in, xb, d_z)
    return GradientBundle(
        d_w_in=d_w_in, d_b_in=d_b_in, d_w_out=d_w_out, d_b_out=d_b_out, d_x=d_x
    )


def import_dense(
    w_in: np.ndarray,
    w_out: np.ndarray,
    strategy: str,
    m1: int,
    n1: int,
    k: int = 1,
    *,
    b_in: np.ndarray | None = None,
    b_out: np.ndarray | None = None,
    epsilon: float = 0.1,
    keep_every: int = 2,
) -> FactorizedFFN:
    """Factorize a dense FFN's two weight matrices into Kronecker sums.

    (m1, n1) are the A-factor dims for w_in; w_out, having the transposed
    target shape, uses (n1, m1). Biases pass through unchanged (zeros when
    not supplied). Strategies: "vl" (plain decomposition), "normalized_vl"
    (norm-preserving scalars), "prune" (row striding; m1/n1/k unused).
    """
    if w_in.shape != w_out.shape[::-1]:
        raise ShapeError(f"w_out shape {w_out.shape} must transpose w_in shape {w_in.shape}")
    if strategy == "vl":
        s_in = vanloan.kronecker_decompose(w_in, m1, n1, k)
        s_out = vanloan.kronecker_decompose(w_out, n1, m1, k)
    elif strategy == "normalized_vl":
        s_in, _ = init_strategies.normalized_vl_init(w_in, m1, n1, k)
        s_out, _ = init_strategies.normalized_vl_init(w_out, n1, m1, k)
    elif strategy == "prune":
        s_in = init_strategies.pruning_init(w_in, keep_every, epsilon)
        s_out = init_strategies.pruning_init(w_out, keep_every, epsilon)
    else:
        raise ValueError(f"unknown strategy {strategy!r}; expected vl, normalized_vl, or prune")
    hidden, d = w_in.shape
    b_in = np.zeros(hidden) if b_in is None else np.ascontiguousarray(b_in, dtype=np.float64).copy()
    b_out = np.zeros(d) if b_out is None else np.ascontiguousarray(b_out, dtype=np.float64).copy()
    return FactorizedFFN(w_in=s_in, b_in=b_in, w_out=s_out, b_out=b_out)


def ffn_param_count(ffn: FactorizedFFN) -> int:
    """Stored parameters: both sums plus the dense biases."""
    return (ffn.w_in.param_count + ffn.w_out.param_count
            + ffn.b_in.size + ffn.b_out.size)
