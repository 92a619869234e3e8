"""Bit-exact checkpoint container (KPT1).

File layout, little-endian:

    bytes 0..4    magic b"KPT1"
    bytes 4..12   u64 manifest length in bytes
    manifest      UTF-8 JSON
    payload       raw row-major tensor data

The manifest carries a ``kind`` (matrix | tensor_dict | kronecker_sum |
toy_model), an optional ``meta`` object, and a ``tensors`` list with name,
role (dense | kron_factor_A | kron_factor_B | scalar | bias), shape, dtype
(f64 | f32), and byte offset relative to the payload start. Kron-factor
tensors additionally carry the group name and factor index; every (group,
factor) must supply an A, a B, and a scalar.

Tensors are sorted by name and packed in that order, and the JSON is
serialized with sorted keys, so identical inputs produce identical bytes.
Writes go to a temp file in the target directory followed by an atomic
rename.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .desk_trainer import DenseFFN, ToyModelConfig, ToyTransformer
from .errors import FormatError
from .factorized_layer import FactorizedFFN
from .kron_core import FactorPair, KroneckerSum

__all__ = ["save", "load", "convert_raw_dir"]

MAGIC = b"KPT1"
_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}
_ROLES = {"dense", "kron_factor_A", "kron_factor_B", "scalar", "bias"}


@dataclass(frozen=True)
class _TensorSpec:
    name: str
    role: str
    array: np.ndarray
    group: str | None = None
    factor: int | None = None


def _specs_for_sum(group: str, ksum: KroneckerSum) -> list[_TensorSpec]:
    specs = []
    for j, f in enumerate(ksum.factors):
        specs.append(_TensorSpec(f"{group}.f{j}.A", "kron_factor_A", f.a, group, j))
        specs.append(_TensorSpec(f"{group}.f{j}.B", "kron_factor_B", f.b, group, j))
        specs.append(_TensorSpec(f"{group}.f{j}.s", "scalar", f.scale, group, j))
    return specs


def _specs_for_model(model: ToyTransformer) -> tuple[dict, list[_TensorSpec]]:
    specs = []
    for name, arr in model.params.items():
        specs.append(_TensorSpec(name, "dense", arr))
    ffn_kinds = []
    for i, ffn in enumerate(model.ffns):
        if isinstance(ffn, DenseFFN):
            ffn_kinds.append("dense")
            specs.append(_TensorSpec(f"h{i}.ffn.w_in", "dense", ffn.w_in))
            specs.append(_TensorSpec(f"h{i}.ffn.w_out", "dense", ffn.w_out))
        else:
            ffn_kinds.append("kron")
            specs.extend(_specs_for_sum(f"h{i}.ffn.w_in", ffn.w_in))
            specs.extend(_specs_for_sum(f"h{i}.ffn.w_out", ffn.w_out))
        specs.append(_TensorSpec(f"h{i}.ffn.b_in", "bias", ffn.b_in))
        specs.append(_TensorSpec(f"h{i}.ffn.b_out", "bias", ffn.b_out))
    cfg = model.cfg
    meta = {
        "model": {
            "layers": cfg.layers, "d_model": cfg.d_model, "ffn_dim": cfg.ffn_dim,
            "heads": cfg.heads, "context": cfg.context, "vocab": cfg.vocab,
        },
        "vocab_chars": model.vocab_chars,
        "ffn_kinds": ffn_kinds,
    }
    return meta, specs


def save(obj, path, dtype: str = "f64") -> None:
    """Serialize a matrix, tensor dict, KroneckerSum, or ToyTransformer."""
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be f64 or f32, got {dtype!r}")
    if isinstance(obj, np.ndarray):
        kind, meta = "matrix", {}
        specs = [_TensorSpec("matrix", "dense", obj)]
    elif isinstance(obj, dict):
        kind, meta = "tensor_dict", {}
        specs = [_TensorSpec(name, "dense", arr) for name, arr in obj.items()]
    elif isinstance(obj, KroneckerSum):
        kind, meta = "kronecker_sum", {"k": obj.k}
        specs = _specs_for_sum("sum", obj)
    elif isinstance(obj, ToyTransformer):
        kind = "toy_model"
        meta, specs = _specs_for_model(obj)
    else:
        raise TypeError(f"cannot serialize object of type {type(obj).__name__}")
    _write_container(path, kind, meta, specs, dtype)


def _write_container(path, kind: str, meta: dict, specs: list[_TensorSpec],
                     dtype: str) -> None:
    np_dtype = _DTYPES[dtype]
    specs = sorted(specs, key=lambda s: s.name)
    entries = []
    blobs = []
    offset = 0
    for s in specs:
        data = np.ascontiguousarray(s.array, dtype=np_dtype).tobytes()
        entry = {
            "name": s.name,
            "role": s.role,
            "shape": list(s.array.shape),
            "dtype": dtype,
            "offset": offset,
        }
        if s.group is not None:
            entry["group"] = s.group
            entry["factor"] = s.factor
        entries.append(entry)
        blobs.append(data)
        offset += len(data)
    manifest = json.dumps(
        {"kind": kind, "meta": meta, "tensors": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")

    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".kpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(manifest)))
            fh.write(manifest)
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_container(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise FormatError(f"bad magic in {path}: expected {MAGIC!r}")
    (manifest_len,) = struct.unpack("<Q", raw[4:12])
    if 12 + manifest_len > len(raw):
        raise FormatError(f"truncated file {path}: manifest extends past EOF")
    try:
        manifest = json.loads(raw[12:12 + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable manifest in {path}: {exc}") from None
    payload = raw[12 + manifest_len:]

    tensors = {}
    spans = []
    for entry in manifest.get("tensors", []):
        name = entry["name"]
        role = entry["role"]
        if role not in _ROLES:
            raise FormatError(f"tensor {name!r} has unknown role {role!r}")
        if entry["dtype"] not in _DTYPES:
            raise FormatError(f"tensor {name!r} has unknown dtype {entry['dtype']!r}")
        np_dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * np_dtype.itemsize
        offset = entry["offset"]
        if offset < 0 or offset + nbytes > len(payload):
            raise FormatError(
                f"tensor {name!r} spans [{offset}, {offset + nbytes}) but payload "
                f"is {len(payload)} bytes"
            )
        spans.append((offset, offset + nbytes, name))
        arr = np.frombuffer(payload, dtype=np_dtype, count=count, offset=offset)
        arr = arr.reshape(shape).astype(np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"tensor {name!r} contains non-finite entries")
        tensors[name] = arr

    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise FormatError(f"tensors {n0!r} and {n1!r} overlap in the payload")

    _check_kron_groups(manifest.get("tensors", []))
    return manifest, tensors


def _check_kron_groups(entries) -> None:
    groups: dict[tuple, set] = {}
    for entry in entries:
        if entry["role"] in ("kron_factor_A", "kron_factor_B", "scalar"):
            if "group" not in entry or "factor" not in entry:
                raise FormatError(f"tensor {entry['name']!r} lacks group/factor metadata")
            groups.setdefault((entry["group"], entry["factor"]), set()).add(entry["role"])
    for (group, factor), roles in groups.items():
        missing = {"kron_factor_A", "kron_factor_B", "scalar"} - roles
        if missing:
            raise FormatError(
                f"factor {factor} of group {group!r} is missing {sorted(missing)}"
            )


def _sum_from_tensors(group: str, tensors: dict) -> KroneckerSum:
    factors = []
    j = 0
    while f"{group}.f{j}.A" in tensors:
        factors.append(FactorPair(
            scale=np.asarray(float(tensors[f"{group}.f{j}.s"])),
            a=tensors[f"{group}.f{j}.A"],
            b=tensors[f"{group}.f{j}.B"],
        ))
        j += 1
    if not factors:
        raise FormatError(f"no factors found for group {group!r}")
    return KroneckerSum(factors=tuple(factors))


def load(path):
    """Load whatever ``save`` wrote; the return type follows the file kind."""
    manifest, tensors = _read_container(path)
    kind = manifest.get("kind")
    if kind == "matrix":
        if "matrix" not in tensors:
            raise FormatError(f"matrix file {path} lacks a 'matrix' tensor")
        return tensors["matrix"]
    if kind == "tensor_dict":
        return tensors
    if kind == "kronecker_sum":
        return _sum_from_tensors("sum", tensors)
    if kind == "toy_model":
        return _model_from_tensors(manifest.get("meta", {}), tensors)
    raise FormatError(f"unknown container kind {kind!r} in {path}")


def _model_from_tensors(meta: dict, tensors: dict) -> ToyTransformer:
    try:
        cfg = ToyModelConfig(**meta["model"])
        vocab_chars = meta["vocab_chars"]
        ffn_kinds = meta["ffn_kinds"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"toy_model manifest is missing metadata: {exc}") from None
    params = {}
    ffns = []
    try:
        for name in ("wte", "wpe"):
            params[name] = tensors[name]
        for i in range(cfg.layers):
            for key in ("ln1.g", "ln1.b", "attn.w", "attn.b",
                        "proj.w", "proj.b", "ln2.g", "ln2.b"):
                params[f"h{i}.{key}"] = tensors[f"h{i}.{key}"]
            b_in = tensors[f"h{i}.ffn.b_in"]
            b_out = tensors[f"h{i}.ffn.b_out"]
            if ffn_kinds[i] == "dense":
                ffns.append(DenseFFN(
                    w_in=tensors[f"h{i}.ffn.w_in"], b_in=b_in,
                    w_out=tensors[f"h{i}.ffn.w_out"], b_out=b_out,
                ))
            else:
                ffns.append(FactorizedFFN(
                    w_in=_sum_from_tensors(f"h{i}.ffn.w_in", tensors), b_in=b_in,
                    w_out=_sum_from_tensors(f"h{i}.ffn.w_out", tensors), b_out=b_out,
                ))
        for name in ("lnf.g", "lnf.b"):
            params[name] = tensors[name]
    except KeyError as exc:
        raise FormatError(f"toy_model file is missing tensor {exc.args[0]!r}") from None
    return ToyTransformer(cfg, vocab_chars, params, ffns)


def convert_raw_dir(src_dir, out_path, dtype: str = "f32") -> None:
    """Convert a directory of raw tensors into a KPT1 tensor_dict.

    The directory must contain ``manifest.json`` with
    ``{"tensors": [{"name": ..., "shape": [...], "file": ...}, ...]}``;
    each file holds raw little-endian f32 data, row-major.
    """
    manifest_path = os.path.join(src_dir, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise FormatError(f"no manifest.json in {src_dir}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable manifest.json in {src_dir}: {exc}") from None
    tensors = {}
    for entry in manifest.get("tensors", []):
        name, shape = entry["name"], tuple(entry["shape"])
        raw = np.fromfile(os.path.join(src_dir, entry["file"]), dtype="<f4")
        count = int(np.prod(shape)) if shape else 1
        if raw.size != count:
            raise FormatError(
                f"tensor {name!r}: file holds {raw.size} values, shape {shape} "
                f"needs {count}"
            )
        tensors[name] = raw.reshape(shape).astype(np.float64)
    save(tensors, out_path, dtype=dtype)
