"""Compression-scheme enumeration and parameter accounting.

A scheme factorizes an m x n weight as k terms of (m1 x n1) kron (m2 x n2)
with m = m1*m2 and n = n1*n2, costing k*(m1*n1 + m2*n2) stored parameters
per matrix. A scheme is rank-preserving when generic factors reach the full
rank of the target:

    min(m1, n1) * min(m2, n2) == min(m, n)

since rank(A kron B) = rank(A) * rank(B) <= min(m1,n1) * min(m2,n2), with
equality for generic (full-rank) factors.

Model totals use the 124M GPT-2 budget: 12 layers x 2 FFN matrices, weights
tied between the token embedding and the output projection. The non-FFN
base is derived from the reference accounting (total minus 24 reference
matrices) rather than an architecture census.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

__all__ = [
    "CompressionScheme",
    "ModelBudget",
    "GPT2_BUDGET",
    "UNTIED_OUTPUT_PARAMS",
    "make_scheme",
    "enumerate_schemes",
    "per_matrix_params",
    "is_rank_preserving",
    "model_size",
    "scalar_overhead",
    "render_table",
    "parse_csv_table",
]

# 50257-token vocab x 768 dims: the output projection that weight tying
# removes. Added back only for comparisons with untied counts.
UNTIED_OUTPUT_PARAMS = 38_597_376


@dataclass(frozen=True)
class ModelBudget:
    """GPT-2-small accounting frame for whole-model totals."""

    reference_total: int = 124_439_832
    per_matrix_reference: int = 2_359_297
    matrices_per_model: int = 24  # 2 FFN matrices x 12 layers
    tied_embeddings: bool = True

    @property
    def base_params(self) -> int:
        """Everything except the 24 FFN matrices."""
        return self.reference_total - self.matrices_per_model * self.per_matrix_reference


GPT2_BUDGET = ModelBudget()


@dataclass(frozen=True)
class CompressionScheme:
    m1: int
    n1: int
    m2: int
    n2: int
    factors: int
    per_matrix_params: int
    model_total_params: int
    rank_preserving: bool

    @property
    def target_rows(self) -> int:
        return self.m1 * self.m2

    @property
    def target_cols(self) -> int:
        return self.n1 * self.n2

    @property
    def name(self) -> str:
        return f"{self.model_total_params // 1_000_000}M"


def per_matrix_params(m1: int, n1: int, m2: int, n2: int, k: int = 1) -> int:
    return k * (m1 * n1 + m2 * n2)


def is_rank_preserving(m1: int, n1: int, m2: int, n2: int) -> bool:
    return min(m1, n1) * min(m2, n2) == min(m1 * m2, n1 * n2)


def model_size(scheme: CompressionScheme, budget: ModelBudget = GPT2_BUDGET,
               untied: bool = False) -> int:
    """base + 24 * k * (m1*n1 + m2*n2), optionally plus the untied output
    matrix for apples-to-apples comparison with untied counts."""
    total = budget.base_params + budget.matrices_per_model * scheme.per_matrix_params
    if untied:
        total += UNTIED_OUTPUT_PARAMS
    return total


def make_scheme(m: int, n: int, m1: int, n1: int, k: int = 1,
                budget: ModelBudget = GPT2_BUDGET) -> CompressionScheme:
    """Build a scheme for factorizing an m x n matrix with A of shape
    (m1, n1), deriving counts against ``budget``."""
    if m % m1 != 0:
        raise ValueError(f"m1={m1} does not divide m={m}")
    if n % n1 != 0:
        raise ValueError(f"n1={n1} does not divide n={n}")
    if k < 1:
        raise ValueError(f"factor count must be positive, got {k}")
    m2, n2 = m // m1, n // n1
    per = per_matrix_params(m1, n1, m2, n2, k)
    return CompressionScheme(
        m1=m1, n1=n1, m2=m2, n2=n2, factors=k,
        per_matrix_params=per,
        model_total_params=budget.base_params + budget.matrices_per_model * per,
        rank_preserving=is_rank_preserving(m1, n1, m2, n2),
    )


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def enumerate_schemes(m: int, n: int, rank_preserving_only: bool = False,
                      budget: ModelBudget = GPT2_BUDGET) -> list[CompressionScheme]:
    """All single-factor divisor-pair schemes for an m x n matrix, sorted by
    per-matrix parameter count (ties broken by (m1, n1))."""
    if m < 1 or n < 1:
        raise ValueError(f"matrix dims must be positive, got ({m}, {n})")
    schemes = [
        make_scheme(m, n, m1, n1, k=1, budget=budget)
        for m1 in _divisors(m)
        for n1 in _divisors(n)
    ]
    if rank_preserving_only:
        schemes = [s for s in schemes if s.rank_preserving]
    schemes.sort(key=lambda s: (s.per_matrix_params, s.m1, s.n1))
    return schemes


def scalar_overhead(layers: int, matrices_per_layer: int, k: int) -> int:
    """Extra parameters from per-factor scalars across the whole model."""
    if layers < 1 or matrices_per_layer < 1 or k < 1:
        raise ValueError("layers, matrices_per_layer, and k must all be positive")
    return k * matrices_per_layer * layers


def _scheme_row(s: CompressionScheme) -> dict:
    return {
        "name": s.name,
        "m1": s.m1,
        "n1": s.n1,
        "m2": s.m2,
        "n2": s.n2,
        "factors": s.factors,
        "per_matrix_params": s.per_matrix_params,
        "model_total_params": s.model_total_params,
        "rank_preserving": s.rank_preserving,
    }


def render_table(schemes: list[CompressionScheme], format: str = "text") -> str:
    """Render schemes as text (Name | Dimension | #Params | Model size),
    csv, or json. Output is deterministic for a given list."""
    if format == "text":
        lines = ["Name | Dimension | #Params | Model size"]
        for s in schemes:
            lines.append(
                f"{s.name} | ({s.m1}, {s.n1}) | {s.per_matrix_params} | "
                f"{s.model_total_params:,}"
            )
        return "\n".join(lines) + "\n"
    if format == "csv":
        buf = io.StringIO()
        fields = ["name", "m1", "n1", "m2", "n2", "factors",
                  "per_matrix_params", "model_total_params", "rank_preserving"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for s in schemes:
            writer.writerow(_scheme_row(s))
        return buf.getvalue()
    if format == "json":
        return json.dumps([_scheme_row(s) for s in schemes], indent=2) + "\n"
    raise ValueError(f"unknown format {format!r}; expected csv, json, or text")


def parse_csv_table(text: str, budget: ModelBudget = GPT2_BUDGET) -> list[CompressionScheme]:
    """Parse render_table(..., 'csv') output back into schemes."""
    reader = csv.DictReader(io.StringIO(text))
    schemes = []
    for row in reader:
        schemes.append(CompressionScheme(
            m1=int(row["m1"]), n1=int(row["n1"]),
            m2=int(row["m2"]), n2=int(row["n2"]),
            factors=int(row["factors"]),
            per_matrix_params=int(row["per_matrix_params"]),
            model_total_params=int(row["model_total_params"]),
            rank_preserving=row["rank_preserving"] == "True",
        ))
    return schemes
