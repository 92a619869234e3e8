"""Desk-scale training pipeline.

Trains a tiny character-level decoder-only transformer in pure numpy
(forward and backward both hand-written, float64 end to end), compresses
its FFN weights into Kronecker sums with any of the init strategies, and
fine-tunes, logging per-step loss curves as CSV. Everything is driven by a
single seeded generator, so runs are bit-identical given (seed, corpus,
configs).

The token embedding doubles as the output projection (weight tying); FFN
hidden width is fixed at 4x the model width, mirroring the architecture
the compression schemes target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, ShapeError
from .factorized_layer import (
    FactorizedFFN,
    ffn_backward,
    ffn_forward,
    gelu,
    gelu_grad,
    import_dense,
)
from .kron_core import FactorPair, KroneckerSum

__all__ = [
    "ToyModelConfig",
    "TrainConfig",
    "DenseFFN",
    "ToyTransformer",
    "LogRow",
    "EvalResult",
    "lr_at",
    "train_dense",
    "compress_checkpoint",
    "finetune",
    "eval_nll",
    "write_loss_log",
    "build_vocab",
    "encode_text",
]

LN_EPS = 1e-5
_MASK_VALUE = -1e30  # exp underflows to exactly 0, keeping backprop clean


@dataclass(frozen=True)
class ToyModelConfig:
    layers: int = 2
    d_model: int = 64
    ffn_dim: int = 256
    heads: int = 4
    context: int = 128
    vocab: int = 0  # filled in from the corpus

    def __post_init__(self):
        if self.ffn_dim != 4 * self.d_model:
            raise ValueError(f"ffn_dim must be 4*d_model, got {self.ffn_dim} vs {self.d_model}")
        if self.d_model % self.heads != 0:
            raise ValueError(f"heads={self.heads} must divide d_model={self.d_model}")
        if min(self.layers, self.d_model, self.heads, self.context) < 1:
            raise ValueError("all model dimensions must be positive")


@dataclass(frozen=True)
class TrainConfig:
    batch_sequences: int = 8
    grad_accum_steps: int = 2
    peak_lr: float = 1e-3
    floor_lr: float = 1e-4
    warmup_steps: int = 20
    epochs: int = 1
    seed: int = 0
    schedule: str = "cosine"
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    eval_interval: int = 50
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.schedule != "cosine":
            raise ValueError(f"only the cosine schedule is supported, got {self.schedule!r}")
        if self.batch_sequences < 1 or self.grad_accum_steps < 1:
            raise ValueError("batch_sequences and grad_accum_steps must be positive")
        if self.epochs < 0 or self.warmup_steps < 0:
            raise ValueError("epochs and warmup_steps must be nonnegative")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")

    @property
    def effective_batch(self) -> int:
        return self.batch_sequences * self.grad_accum_steps


def lr_at(step: int, total_steps: int, tcfg: TrainConfig) -> float:
    """Linear warmup to peak at step == warmup_steps, then cosine to floor."""
    w = tcfg.warmup_steps
    if step < w:
        return tcfg.peak_lr * step / w
    if total_steps <= w:
        return tcfg.peak_lr
    progress = (step - w) / (total_steps - w)
    return tcfg.floor_lr + 0.5 * (tcfg.peak_lr - tcfg.floor_lr) * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# Tokenization

def build_vocab(text: str) -> str:
    """Sorted string of the distinct characters in ``text``."""
    return "".join(sorted(set(text)))


def encode_text(text: str, vocab: str) -> np.ndarray:
    """Map characters to vocab indices; unknown characters are a DataError."""
    table = {ch: i for i, ch in enumerate(vocab)}
    try:
        return np.array([table[ch] for ch in text], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"character {exc.args[0]!r} not in model vocabulary") from None


# ---------------------------------------------------------------------------
# Layers

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    d = xhat.shape[-1]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _attention_forward(x, w_qkv, b_qkv, w_proj, b_proj, heads):
    bsz, t, d = x.shape
    hd = d // heads
    qkv = x @ w_qkv.T + b_qkv
    q, k, v = np.split(qkv, 3, axis=-1)

    def to_heads(m):
        return m.reshape(bsz, t, heads, hd).transpose(0, 2, 1, 3)

    qh, kh, vh = to_heads(q), to_heads(k), to_heads(v)
    scale = 1.0 / math.sqrt(hd)
    logits = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    mask = np.triu(np.ones((t, t), dtype=bool), k=1)
    logits = np.where(mask, _MASK_VALUE, logits)
    p = _softmax(logits)
    yh = p @ vh
    y = yh.transpose(0, 2, 1, 3).reshape(bsz, t, d)
    out = y @ w_proj.T + b_proj
    return out, (x, qh, kh, vh, p, y)


def _attention_backward(dout, w_qkv, w_proj, heads, cache):
    x, qh, kh, vh, p, y = cache
    bsz, t, d = x.shape
    hd = d // heads
    scale = 1.0 / math.sqrt(hd)

    d_w_proj = dout.reshape(-1, d).T @ y.reshape(-1, d)
    d_b_proj = dout.reshape(-1, d).sum(axis=0)
    dy = dout @ w_proj
    dyh = dy.reshape(bsz, t, heads, hd).transpose(0, 2, 1, 3)

    dp = dyh @ vh.transpose(0, 1, 3, 2)
    dvh = p.transpose(0, 1, 3, 2) @ dyh
    dlogits = p * (dp - (dp * p).sum(axis=-1, keepdims=True))
    dqh = (dlogits @ kh) * scale
    dkh = (dlogits.transpose(0, 1, 3, 2) @ qh) * scale

    def merge(m):
        return m.transpose(0, 2, 1, 3).reshape(bsz, t, d)

    dqkv = np.concatenate([merge(dqh), merge(dkh), merge(dvh)], axis=-1)
    d_w_qkv = dqkv.reshape(-1, 3 * d).T @ x.reshape(-1, d)
    d_b_qkv = dqkv.reshape(-1, 3 * d).sum(axis=0)
    dx = dqkv @ w_qkv
    return dx, d_w_qkv, d_b_qkv, d_w_proj, d_b_proj


@dataclass(eq=False)
class DenseFFN:
    w_in: np.ndarray
    b_in: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray


def _dense_ffn_forward(ffn: DenseFFN, xf):
    z = xf @ ffn.w_in.T + ffn.b_in
    h = gelu(z)
    out = h @ ffn.w_out.T + ffn.b_out
    return out, (xf, z, h)


def _dense_ffn_backward(ffn: DenseFFN, dout, cache):
    xf, z, h = cache
    d_w_out = dout.T @ h
    d_b_out = dout.sum(axis=0)
    dh = dout @ ffn.w_out
    dz = dh * gelu_grad(z)
    d_w_in = dz.T @ xf
    d_b_in = dz.sum(axis=0)
    dx = dz @ ffn.w_in
    return dx, d_w_in, d_b_in, d_w_out, d_b_out


def _cross_entropy(logits, targets):
    """Mean NLL over all positions, plus the logits gradient."""
    bsz, t, v = logits.shape
    flat = logits.reshape(-1, v)
    tgt = targets.reshape(-1)
    n = flat.shape[0]
    shifted = flat - flat.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    loss = float((lse - shifted[np.arange(n), tgt]).mean())
    dflat = np.exp(shifted - lse[:, None])
    dflat[np.arange(n), tgt] -= 1.0
    dflat /= n
    return loss, dflat.reshape(bsz, t, v)


# ---------------------------------------------------------------------------
# Model

class ToyTransformer:
    """Character-level GPT-style model; FFNs are dense or Kronecker sums."""

    def __init__(self, cfg: ToyModelConfig, vocab_chars: str, params: dict,
                 ffns: list):
        if cfg.vocab != len(vocab_chars):
            raise ValueError(f"cfg.vocab={cfg.vocab} != len(vocab_chars)={len(vocab_chars)}")
        self.cfg = cfg
        self.vocab_chars = vocab_chars
        self.params = params
        self.ffns = ffns

    # -- construction -------------------------------------------------------

    @classmethod
    def init(cls, cfg: ToyModelConfig, vocab_chars: str, seed: int) -> "ToyTransformer":
        rng = np.random.default_rng([seed, 0x7031])
        d, f = cfg.d_model, cfg.ffn_dim
        std = 0.02
        params: dict[str, np.ndarray] = {}
        params["wte"] = rng.normal(0.0, std, (cfg.vocab, d))
        params["wpe"] = rng.normal(0.0, std, (cfg.context, d))
        ffns = []
        for i in range(cfg.layers):
            params[f"h{i}.ln1.g"] = np.ones(d)
            params[f"h{i}.ln1.b"] = np.zeros(d)
            params[f"h{i}.attn.w"] = rng.normal(0.0, std, (3 * d, d))
            params[f"h{i}.attn.b"] = np.zeros(3 * d)
            params[f"h{i}.proj.w"] = rng.normal(0.0, std, (d, d))
            params[f"h{i}.proj.b"] = np.zeros(d)
            params[f"h{i}.ln2.g"] = np.ones(d)
            params[f"h{i}.ln2.b"] = np.zeros(d)
            ffns.append(DenseFFN(
                w_in=rng.normal(0.0, std, (f, d)),
                b_in=np.zeros(f),
                w_out=rng.normal(0.0, std, (d, f)),
                b_out=np.zeros(d),
            ))
        params["lnf.g"] = np.ones(d)
        params["lnf.b"] = np.zeros(d)
        return cls(cfg, vocab_chars, params, ffns)

    def copy(self) -> "ToyTransformer":
        params = {k: v.copy() for k, v in self.params.items()}
        ffns = [_copy_ffn(f) for f in self.ffns]
        return ToyTransformer(self.cfg, self.vocab_chars, params, ffns)

    # -- parameter registry --------------------------------------------------

    def parameters(self):
        """Yield (name, array) for every trainable tensor, stable order."""
        yield "wte", self.params["wte"]
        yield "wpe", self.params["wpe"]
        for i in range(self.cfg.layers):
            for key in ("ln1.g", "ln1.b", "attn.w", "attn.b",
                        "proj.w", "proj.b", "ln2.g", "ln2.b"):
                yield f"h{i}.{key}", self.params[f"h{i}.{key}"]
            yield from _ffn_parameters(i, self.ffns[i])
        yield "lnf.g", self.params["lnf.g"]
        yield "lnf.b", self.params["lnf.b"]

    def param_count(self) -> int:
        return sum(p.size if p.ndim else 1 for _, p in self.parameters())

    # -- forward / backward --------------------------------------------------

    def _forward(self, idx: np.ndarray):
        cfg = self.cfg
        bsz, t = idx.shape
        if t > cfg.context:
            raise ShapeError(f"sequence length {t} exceeds context {cfg.context}")
        p = self.params
        x = p["wte"][idx] + p["wpe"][:t]
        caches = []
        for i in range(cfg.layers):
            a1, ln1_cache = _layer_norm(x, p[f"h{i}.ln1.g"], p[f"h{i}.ln1.b"])
            att, att_cache = _attention_forward(
                a1, p[f"h{i}.attn.w"], p[f"h{i}.attn.b"],
                p[f"h{i}.proj.w"], p[f"h{i}.proj.b"], cfg.heads,
            )
            x1 = x + att
            a2, ln2_cache = _layer_norm(x1, p[f"h{i}.ln2.g"], p[f"h{i}.ln2.b"])
            a2_flat = a2.reshape(-1, cfg.d_model)
            ffn = self.ffns[i]
            if isinstance(ffn, DenseFFN):
                out_flat, ffn_cache = _dense_ffn_forward(ffn, a2_flat)
            else:
                out_flat = ffn_forward(ffn, a2_flat)
                ffn_cache = a2_flat
            x = x1 + out_flat.reshape(bsz, t, cfg.d_model)
            caches.append((ln1_cache, att_cache, ln2_cache, ffn_cache))
        xf, lnf_cache = _layer_norm(x, p["lnf.g"], p["lnf.b"])
        logits = xf @ p["wte"].T
        return logits, (idx, xf, lnf_cache, caches)

    def logits(self, idx: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(idx, dtype=np.int64))[0]

    def nll(self, idx: np.ndarray, targets: np.ndarray) -> float:
        logits, _ = self._forward(np.asarray(idx, dtype=np.int64))
        loss, _ = _cross_entropy(logits, np.asarray(targets, dtype=np.int64))
        return loss

    def loss_and_grads(self, idx: np.ndarray, targets: np.ndarray):
        idx = np.asarray(idx, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        cfg = self.cfg
        p = self.params
        logits, (idx, xf, lnf_cache, caches) = self._forward(idx)
        loss, dlogits = _cross_entropy(logits, targets)

        grads = {name: np.zeros_like(arr) for name, arr in self.parameters()}
        bsz, t = idx.shape
        d = cfg.d_model
        v = cfg.vocab

        # Tied head: logits = xf @ wte.T
        grads["wte"] += dlogits.reshape(-1, v).T @ xf.reshape(-1, d)
        dxf = dlogits @ p["wte"]
        dx, dg, db = _layer_norm_backward(dxf, p["lnf.g"], lnf_cache)
        grads["lnf.g"] += dg
        grads["lnf.b"] += db

        for i in reversed(range(cfg.layers)):
            ln1_cache, att_cache, ln2_cache, ffn_cache = caches[i]
            ffn = self.ffns[i]
            dout_flat = dx.reshape(-1, d)
            if isinstance(ffn, DenseFFN):
                dff_x, d_w_in, d_b_in, d_w_out, d_b_out = _dense_ffn_backward(
                    ffn, dout_flat, ffn_cache)
                grads[f"h{i}.ffn.w_in"] += d_w_in
                grads[f"h{i}.ffn.b_in"] += d_b_in
                grads[f"h{i}.ffn.w_out"] += d_w_out
                grads[f"h{i}.ffn.b_out"] += d_b_out
            else:
                bundle = ffn_backward(ffn, ffn_cache, dout_flat)
                for j, fg in enumerate(bundle.d_w_in):
                    grads[f"h{i}.ffn.w_in.f{j}.s"] += fg.d_s
                    grads[f"h{i}.ffn.w_in.f{j}.a"] += fg.d_a
                    grads[f"h{i}.ffn.w_in.f{j}.b"] += fg.d_b
                for j, fg in enumerate(bundle.d_w_out):
                    grads[f"h{i}.ffn.w_out.f{j}.s"] += fg.d_s
                    grads[f"h{i}.ffn.w_out.f{j}.a"] += fg.d_a
                    grads[f"h{i}.ffn.w_out.f{j}.b"] += fg.d_b
                grads[f"h{i}.ffn.b_in"] += bundle.d_b_in
                grads[f"h{i}.ffn.b_out"] += bundle.d_b_out
                dff_x = bundle.d_x
            da2 = dff_x.reshape(bsz, t, d)
            dx1_from_ffn, dg, db = _layer_norm_backward(da2, p[f"h{i}.ln2.g"], ln2_cache)
            grads[f"h{i}.ln2.g"] += dg
            grads[f"h{i}.ln2.b"] += db
            dx1 = dx + dx1_from_ffn

            datt = dx1
            da1, d_w_qkv, d_b_qkv, d_w_proj, d_b_proj = _attention_backward(
                datt, p[f"h{i}.attn.w"], p[f"h{i}.proj.w"], cfg.heads, att_cache)
            grads[f"h{i}.attn.w"] += d_w_qkv
            grads[f"h{i}.attn.b"] += d_b_qkv
            grads[f"h{i}.proj.w"] += d_w_proj
            grads[f"h{i}.proj.b"] += d_b_proj
            dx0_from_attn, dg, db = _layer_norm_backward(da1, p[f"h{i}.ln1.g"], ln1_cache)
            grads[f"h{i}.ln1.g"] += dg
            grads[f"h{i}.ln1.b"] += db
            dx = dx1 + dx0_from_attn

        np.add.at(grads["wte"], idx.reshape(-1), dx.reshape(-1, d))
        grads["wpe"][:t] += dx.sum(axis=0)
        return loss, grads


def _ffn_parameters(i: int, ffn):
    if isinstance(ffn, DenseFFN):
        yield f"h{i}.ffn.w_in", ffn.w_in
        yield f"h{i}.ffn.b_in", ffn.b_in
        yield f"h{i}.ffn.w_out", ffn.w_out
        yield f"h{i}.ffn.b_out", ffn.b_out
    else:
        for j, fp in enumerate(ffn.w_in.factors):
            yield f"h{i}.ffn.w_in.f{j}.s", fp.scale
            yield f"h{i}.ffn.w_in.f{j}.a", fp.a
            yield f"h{i}.ffn.w_in.f{j}.b", fp.b
        yield f"h{i}.ffn.b_in", ffn.b_in
        for j, fp in enumerate(ffn.w_out.factors):
            yield f"h{i}.ffn.w_out.f{j}.s", fp.scale
            yield f"h{i}.ffn.w_out.f{j}.a", fp.a
            yield f"h{i}.ffn.w_out.f{j}.b", fp.b
        yield f"h{i}.ffn.b_out", ffn.b_out


def _copy_ffn(ffn):
    if isinstance(ffn, DenseFFN):
        return DenseFFN(w_in=ffn.w_in.copy(), b_in=ffn.b_in.copy(),
                        w_out=ffn.w_out.copy(), b_out=ffn.b_out.copy())
    return FactorizedFFN(
        w_in=_copy_sum(ffn.w_in), b_in=ffn.b_in.copy(),
        w_out=_copy_sum(ffn.w_out), b_out=ffn.b_out.copy(),
    )


def _copy_sum(ksum: KroneckerSum) -> KroneckerSum:
    return KroneckerSum(factors=tuple(
        FactorPair(scale=f.scale.copy(), a=f.a.copy(), b=f.b.copy())
        for f in ksum.factors
    ))


# ---------------------------------------------------------------------------
# Optimizer

class AdamW:
    """Adam with decoupled weight decay; decay applies to 2-D weights only."""

    def __init__(self, model: ToyTransformer, tcfg: TrainConfig):
        self.tcfg = tcfg
        self.slots = list(model.parameters())
        self.m = {name: np.zeros_like(p) for name, p in self.slots}
        self.v = {name: np.zeros_like(p) for name, p in self.slots}
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        c = self.tcfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in self.slots:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            if c.weight_decay and p.ndim >= 2:
                p -= lr * c.weight_decay * p
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.adam_eps)


def _clip_grads(grads: dict, max_norm: float) -> None:
    if max_norm <= 0:
        return
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


# ---------------------------------------------------------------------------
# Training driver

@dataclass(frozen=True)
class LogRow:
    step: int
    lr: float
    train_nll: float
    val_nll: float | None


@dataclass(frozen=True)
class EvalResult:
    nll: float
    perplexity: float
    tokens: int


def write_loss_log(rows: list[LogRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,lr,train_nll,val_nll\n")
        for r in rows:
            val = "" if r.val_nll is None else repr(r.val_nll)
            fh.write(f"{r.step},{r.lr!r},{r.train_nll!r},{val}\n")


def _sample_batch(ids: np.ndarray, batch: int, context: int, rng) -> tuple[np.ndarray, np.ndarray]:
    if len(ids) < context + 1:
        raise DataError(f"need at least {context + 1} tokens to form a window, got {len(ids)}")
    starts = rng.integers(0, len(ids) - context, size=batch)
    x = np.stack([ids[s:s + context] for s in starts])
    y = np.stack([ids[s + 1:s + context + 1] for s in starts])
    return x, y


def _nll_on_data(model: ToyTransformer, ids: np.ndarray, batch_windows: int = 64) -> float:
    """Mean per-token NLL over non-overlapping context windows."""
    ctx = model.cfg.context
    n = len(ids)
    if n < 2:
        raise DataError("held-out text must contain at least two characters")
    total_nll = 0.0
    total_tok = 0
    full_starts = [s for s in range(0, n - 1, ctx) if s + ctx + 1 <= n]
    for lo in range(0, len(full_starts), batch_windows):
        chunk = full_starts[lo:lo + batch_windows]
        x = np.stack([ids[s:s + ctx] for s in chunk])
        y = np.stack([ids[s + 1:s + ctx + 1] for s in chunk])
        total_nll += model.nll(x, y) * x.size
        total_tok += x.size
    tail = len(full_starts) * ctx
    if tail < n - 1:
        x = ids[tail:n - 1][None, :]
        y = ids[tail + 1:n][None, :]
        total_nll += model.nll(x, y) * x.size
        total_tok += x.size
    return total_nll / total_tok


def _steps_per_epoch(train_tokens: int, tcfg: TrainConfig, context: int) -> int:
    per_step = tcfg.effective_batch * context
    return max(1, train_tokens // per_step)


def _run_training(model: ToyTransformer, train_ids: np.ndarray, val_ids: np.ndarray,
                  tcfg: TrainConfig) -> list[LogRow]:
    ctx = model.cfg.context
    total = tcfg.epochs * _steps_per_epoch(len(train_ids), tcfg, ctx)
    opt = AdamW(model, tcfg)
    rng = np.random.default_rng([tcfg.seed, 0xBA7C])
    rows: list[LogRow] = []
    for step in range(total):
        lr = lr_at(step, total, tcfg)
        accum: dict[str, np.ndarray] | None = None
        loss_sum = 0.0
        for _ in range(tcfg.grad_accum_steps):
            x, y = _sample_batch(train_ids, tcfg.batch_sequences, ctx, rng)
            loss, grads = model.loss_and_grads(x, y)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite loss {loss} at step {step}")
            loss_sum += loss
            if accum is None:
                accum = grads
            else:
                for name in accum:
                    accum[name] += grads[name]
        assert accum is not None
        if tcfg.grad_accum_steps > 1:
            for g in accum.values():
                g /= tcfg.grad_accum_steps
        _clip_grads(accum, tcfg.grad_clip)
        opt.step(accum, lr)
        val = None
        if (step + 1) % tcfg.eval_interval == 0 or step == total - 1:
            val = _nll_on_data(model, val_ids)
        rows.append(LogRow(step=step, lr=lr, train_nll=loss_sum / tcfg.grad_accum_steps,
                           val_nll=val))
    return rows


def _split_corpus(ids: np.ndarray, val_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    cut = int(len(ids) * (1.0 - val_fraction))
    return ids[:cut], ids[cut:]


# ---------------------------------------------------------------------------
# Pipeline operations

def train_dense(corpus: str, cfg: ToyModelConfig | None = None,
                tcfg: TrainConfig | None = None) -> tuple[ToyTransformer, list[LogRow]]:
    """Train a dense model from scratch on a UTF-8 character corpus."""
    cfg = cfg or ToyModelConfig()
    tcfg = tcfg or TrainConfig()
    if len(corpus) < 10 * cfg.context:
        raise DataError(
            f"corpus of {len(corpus)} chars is too small; need at least {10 * cfg.context}"
        )
    vocab = build_vocab(corpus)
    cfg = replace(cfg, vocab=len(vocab))
    ids = encode_text(corpus, vocab)
    train_ids, val_ids = _split_corpus(ids, tcfg.val_fraction)
    model = ToyTransformer.init(cfg, vocab, tcfg.seed)
    rows = _run_training(model, train_ids, val_ids, tcfg)
    return model, rows


def compress_checkpoint(model: ToyTransformer, strategy: str, m1: int, n1: int,
                        k: int = 1, *, epsilon: float = 0.1,
                        keep_every: int = 2) -> ToyTransformer:
    """Replace every dense FFN with a Kronecker-sum FFN; everything else is
    copied verbatim."""
    out = model.copy()
    for i, ffn in enumerate(out.ffns):
        if not isinstance(ffn, DenseFFN):
            raise ValueError(f"layer {i} FFN is already factorized")
        out.ffns[i] = import_dense(
            ffn.w_in, ffn.w_out, strategy, m1, n1, k,
            b_in=ffn.b_in, b_out=ffn.b_out,
            epsilon=epsilon, keep_every=keep_every,
        )
    return out


def finetune(model: ToyTransformer, corpus: str,
             tcfg: TrainConfig) -> tuple[ToyTransformer, list[LogRow]]:
    """Continue training a checkpoint (dense or compressed) on ``corpus``.

    The input model is left untouched; a trained copy is returned.
    """
    ids = encode_text(corpus, model.vocab_chars)
    train_ids, val_ids = _split_corpus(ids, tcfg.val_fraction)
    out = model.copy()
    rows = _run_training(out, train_ids, val_ids, tcfg)
    return out, rows


def eval_nll(model: ToyTransformer, text: str) -> EvalResult:
    """Per-token NLL and perplexity of the model on held-out text."""
    if len(text) < 2:
        raise DataError("held-out text must contain at least two characters")
    ids = encode_text(text, model.vocab_chars)
    nll = _nll_on_data(model, ids)
    return EvalResult(nll=nll, perplexity=math.exp(nll), tokens=len(ids) - 1)
