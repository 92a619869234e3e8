"""Shared independent oracles for the test suite.

These deliberately avoid the library code paths they are used to check:
matmul gets a triple loop, rank gets Gaussian elimination, and the
decomposition optimum gets alternating least squares on the raw blocks.
"""

from __future__ import annotations

import os

import numpy as np

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def sample_corpus(limit: int | None = None) -> str:
    with open(os.path.join(_DATA_DIR, "sample_corpus.txt"), "r", encoding="utf-8") as fh:
        text = fh.read()
    return text[:limit] if limit else text


def rel_err(actual: float, expected: float) -> float:
    return abs(actual - expected) / max(1e-300, abs(expected))


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop reference product."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def rref_rank(mat: np.ndarray, tol: float = 1e-8) -> int:
    """Pivot count from Gaussian elimination with partial pivoting."""
    a = np.array(mat, dtype=np.float64)
    scale = np.abs(a).max()
    if scale == 0.0:
        return 0
    a /= scale
    rows, cols = a.shape
    rank = 0
    for c in range(cols):
        if rank >= rows:
            break
        piv = rank + int(np.argmax(np.abs(a[rank:, c])))
        if abs(a[piv, c]) <= tol:
            continue
        a[[rank, piv]] = a[[piv, rank]]
        a[rank] /= a[rank, c]
        others = [r for r in range(rows) if r != rank]
        a[others] -= np.outer(a[others, c], a[rank])
        rank += 1
    return rank


def als_rank1_best(w: np.ndarray, m1: int, n1: int, restarts: int = 200,
                   iters: int = 15, seed: int = 0) -> float:
    """Best Frobenius error of a single Kronecker term over random-restart
    alternating least squares, fitted directly on the (m2 x n2) blocks."""
    m2 = w.shape[0] // m1
    n2 = w.shape[1] // n1
    w4 = w.reshape(m1, m2, n1, n2)
    rng = np.random.default_rng(seed)
    best = np.inf
    for _ in range(restarts):
        b = rng.normal(size=(m2, n2))
        a = np.zeros((m1, n1))
        for _ in range(iters):
            a = np.einsum("ipjq,pq->ij", w4, b) / np.sum(b * b)
            b = np.einsum("ipjq,ij->pq", w4, a) / np.sum(a * a)
        resid = w4 - np.einsum("ij,pq->ipjq", a, b)
        best = min(best, float(np.linalg.norm(resid)))
    return best


def fd_grad_entry(loss_fn, arr: np.ndarray, index, h: float = 1e-5) -> float:
    """Central finite difference of ``loss_fn()`` in one entry of ``arr``."""
    if arr.ndim == 0:
        old = float(arr)
        arr[()] = old + h
        lp = loss_fn()
        arr[()] = old - h
        lm = loss_fn()
        arr[()] = old
    else:
        old = arr[index]
        arr[index] = old + h
        lp = loss_fn()
        arr[index] = old - h
        lm = loss_fn()
        arr[index] = old
    return (lp - lm) / (2.0 * h)


def grad_rel_err(analytic: float, fd: float) -> float:
    """Relative error with an absolute floor of 1 for near-zero gradients."""
    return abs(analytic - fd) / max(1.0, abs(analytic), abs(fd))
