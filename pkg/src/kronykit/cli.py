"""Command-line pipeline: plan, count, decompose, error, report-norms,
train-dense, compress, finetune, eval, absorb-scalars, convert.

Machine-readable results go to stdout (JSON unless a flag selects another
format); diagnostics and the echoed run configuration go to stderr. Exit
codes: 0 success, 1 runtime/data error, 2 usage error. ``KRONYKIT_SEED``
provides the seed when --seed is absent.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys

import numpy as np

from . import desk_trainer, init_strategies, kron_core, model_io, scheme_planner, vanloan
from .errors import DataError, FormatError, ShapeError

__all__ = ["run", "main"]


def _shape_arg(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected MxN (e.g. 3072x768), got {text!r}")
    a, b = int(m.group(1)), int(m.group(2))
    if a < 1 or b < 1:
        raise argparse.ArgumentTypeError(f"dimensions must be positive, got {text!r}")
    return a, b


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    return int(os.environ.get("KRONYKIT_SEED", "0"))


def _echo_config(args) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config: " + json.dumps(cfg, default=str, sort_keys=True), file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load_matrix(path, tensor: str | None):
    obj = model_io.load(path)
    if isinstance(obj, np.ndarray):
        return obj
    if isinstance(obj, dict):
        if tensor is None:
            raise DataError(
                f"{path} holds multiple tensors; pick one with --tensor "
                f"(available: {', '.join(sorted(obj))})"
            )
        if tensor not in obj:
            raise DataError(f"tensor {tensor!r} not in {path}")
        return obj[tensor]
    raise DataError(f"{path} does not hold a dense matrix")


# ---------------------------------------------------------------------------
# Subcommands

def _cmd_plan(args) -> int:
    m, n = args.shape
    schemes = scheme_planner.enumerate_schemes(m, n, rank_preserving_only=args.rank_preserving)
    sys.stdout.write(scheme_planner.render_table(schemes, args.format))
    return 0


def _cmd_count(args) -> int:
    m, n = args.shape
    m1, n1 = args.dims
    scheme = scheme_planner.make_scheme(m, n, m1, n1, k=args.factors)
    total = scheme_planner.model_size(scheme, untied=args.untied)
    _emit({
        "m1": scheme.m1, "n1": scheme.n1, "m2": scheme.m2, "n2": scheme.n2,
        "factors": scheme.factors,
        "per_matrix_params": scheme.per_matrix_params,
        "model_total_params": total,
        "rank_preserving": scheme.rank_preserving,
        "untied": args.untied,
    })
    return 0


def _cmd_decompose(args) -> int:
    w = _load_matrix(args.input, args.tensor)
    m1, n1 = args.dims
    ksum = vanloan.kronecker_decompose(w, m1, n1, args.factors)
    model_io.save(ksum, args.output)
    err = vanloan.reconstruction_error(w, ksum)
    norm = float(np.linalg.norm(w))
    _emit({
        "input_shape": list(w.shape),
        "a_shape": list(ksum.a_shape),
        "b_shape": list(ksum.b_shape),
        "factors": ksum.k,
        "frobenius_error": err,
        "relative_error": err / norm if norm > 0 else 0.0,
        "output": args.output,
    })
    return 0


def _cmd_error(args) -> int:
    w = _load_matrix(args.original, args.tensor)
    ksum = model_io.load(args.sum)
    if not isinstance(ksum, kron_core.KroneckerSum):
        raise DataError(f"{args.sum} does not hold a Kronecker sum")
    err = vanloan.reconstruction_error(w, ksum)
    norm = float(np.linalg.norm(w))
    _emit({
        "frobenius_error": err,
        "relative_error": err / norm if norm > 0 else 0.0,
    })
    return 0


def _cmd_report_norms(args) -> int:
    w = _load_matrix(args.original, args.tensor)
    ksum = model_io.load(args.sum)
    if not isinstance(ksum, kron_core.KroneckerSum):
        raise DataError(f"{args.sum} does not hold a Kronecker sum")
    _emit(init_strategies.norm_report(w, ksum).to_dict())
    return 0


def _cmd_absorb_scalars(args) -> int:
    ksum = model_io.load(args.input)
    if not isinstance(ksum, kron_core.KroneckerSum):
        raise DataError(f"{args.input} does not hold a Kronecker sum")
    absorbed = kron_core.absorb_scalars(ksum)
    model_io.save(absorbed, args.output)
    _emit({
        "factors": absorbed.k,
        "params_before": ksum.param_count,
        "params_after": absorbed.param_count,
        "output": args.output,
    })
    return 0


def _train_config(args, seed: int) -> desk_trainer.TrainConfig:
    return desk_trainer.TrainConfig(
        batch_sequences=args.batch,
        grad_accum_steps=args.accum,
        peak_lr=args.peak_lr,
        floor_lr=args.floor_lr,
        warmup_steps=args.warmup,
        epochs=args.epochs,
        seed=seed,
        eval_interval=args.eval_interval,
    )


def _read_text(path) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _train_summary(model, rows, extra=None) -> dict:
    out = {
        "steps": len(rows),
        "final_train_nll": rows[-1].train_nll if rows else None,
        "final_val_nll": rows[-1].val_nll if rows else None,
        "param_count": model.param_count(),
    }
    if extra:
        out.update(extra)
    return out


def _cmd_train_dense(args) -> int:
    seed = _resolve_seed(args)
    corpus = _read_text(args.corpus)
    cfg = desk_trainer.ToyModelConfig(
        layers=args.layers, d_model=args.d_model, ffn_dim=4 * args.d_model,
        heads=args.heads, context=args.context,
    )
    tcfg = _train_config(args, seed)
    model, rows = desk_trainer.train_dense(corpus, cfg, tcfg)
    model_io.save(model, args.out)
    if args.log:
        desk_trainer.write_loss_log(rows, args.log)
    _emit(_train_summary(model, rows, {"vocab": model.cfg.vocab, "out": args.out}))
    return 0


def _cmd_compress(args) -> int:
    model = model_io.load(args.ckpt)
    if not isinstance(model, desk_trainer.ToyTransformer):
        raise DataError(f"{args.ckpt} does not hold a model checkpoint")
    m1, n1 = args.dims
    before = model.param_count()
    compressed = desk_trainer.compress_checkpoint(
        model, args.strategy, m1, n1, args.factors,
        epsilon=args.epsilon, keep_every=args.keep_every,
    )
    model_io.save(compressed, args.out)
    _emit({
        "strategy": args.strategy,
        "params_before": before,
        "params_after": compressed.param_count(),
        "out": args.out,
    })
    return 0


def _cmd_finetune(args) -> int:
    seed = _resolve_seed(args)
    model = model_io.load(args.ckpt)
    if not isinstance(model, desk_trainer.ToyTransformer):
        raise DataError(f"{args.ckpt} does not hold a model checkpoint")
    corpus = _read_text(args.corpus)
    tcfg = _train_config(args, seed)
    tuned, rows = desk_trainer.finetune(model, corpus, tcfg)
    model_io.save(tuned, args.out)
    if args.log:
        desk_trainer.write_loss_log(rows, args.log)
    _emit(_train_summary(tuned, rows, {"out": args.out}))
    return 0


def _cmd_eval(args) -> int:
    model = model_io.load(args.ckpt)
    if not isinstance(model, desk_trainer.ToyTransformer):
        raise DataError(f"{args.ckpt} does not hold a model checkpoint")
    result = desk_trainer.eval_nll(model, _read_text(args.text))
    _emit({"nll": result.nll, "perplexity": result.perplexity, "tokens": result.tokens})
    return 0


def _cmd_convert(args) -> int:
    model_io.convert_raw_dir(args.src, args.out, dtype=args.dtype)
    _emit({"out": args.out})
    return 0


# ---------------------------------------------------------------------------
# Parser

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--accum", type=int, default=2)
    p.add_argument("--peak-lr", type=float, default=1e-3)
    p.add_argument("--floor-lr", type=float, default=1e-4)
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--eval-interval", type=int, default=50)
    p.add_argument("--seed", type=int, default=None,
                   help="falls back to KRONYKIT_SEED, then 0")
    p.add_argument("--log", default=None, help="write per-step CSV loss log here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kronykit",
        description="Kronecker-product compression toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="enumerate compression schemes")
    p.add_argument("--shape", type=_shape_arg, default=(3072, 768))
    p.add_argument("--rank-preserving", action="store_true")
    p.add_argument("--format", choices=("csv", "json", "text"), default="text")
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("count", help="parameter counts for one scheme")
    p.add_argument("--dims", type=_shape_arg, required=True, help="A-factor dims m1xn1")
    p.add_argument("--factors", type=int, default=1)
    p.add_argument("--shape", type=_shape_arg, default=(3072, 768))
    p.add_argument("--untied", action="store_true")
    p.set_defaults(func=_cmd_count)

    p = sub.add_parser("decompose", help="nearest-Kronecker decomposition of a matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--tensor", default=None)
    p.add_argument("--dims", type=_shape_arg, required=True, help="A-factor dims m1xn1")
    p.add_argument("--factors", type=int, default=1)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("error", help="reconstruction error of a sum against a matrix")
    p.add_argument("--original", required=True)
    p.add_argument("--tensor", default=None)
    p.add_argument("--sum", required=True)
    p.set_defaults(func=_cmd_error)

    p = sub.add_parser("report-norms", help="norm comparison report")
    p.add_argument("--original", required=True)
    p.add_argument("--tensor", default=None)
    p.add_argument("--sum", required=True)
    p.set_defaults(func=_cmd_report_norms)

    p = sub.add_parser("absorb-scalars", help="fold scalars into the A factors")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_absorb_scalars)

    p = sub.add_parser("train-dense", help="train a dense toy model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--context", type=int, default=128)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train_dense)

    p = sub.add_parser("compress", help="factorize a checkpoint's FFN weights")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=("vl", "normalized_vl", "prune"), required=True)
    p.add_argument("--dims", type=_shape_arg, required=True, help="A-factor dims m1xn1")
    p.add_argument("--factors", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--keep-every", type=int, default=2)
    p.set_defaults(func=_cmd_compress)

    p = sub.add_parser("finetune", help="continue training a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("eval", help="held-out NLL and perplexity")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--text", required=True, help="path to held-out text")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("convert", help="raw tensor directory -> KPT1 container")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dtype", choices=("f32", "f64"), default="f32")
    p.set_defaults(func=_cmd_convert)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _echo_config(args)
    try:
        return args.func(args)
    except (ShapeError, FormatError, DataError, ValueError, FloatingPointError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
