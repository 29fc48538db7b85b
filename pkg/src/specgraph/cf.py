"""Closed-form block-sparse approximation of a naive inverse CSD tensor."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor_core import (
    FrequencyPartition,
    InverseCSDTensor,
    ValidationError,
    selection_mask,
    vec,
)


def validate_budget(budget: Sequence[int], partition: FrequencyPartition, n: int) -> np.ndarray:
    s = np.asarray(budget)
    if s.ndim != 1 or s.shape[0] != partition.k:
        raise ValidationError(f"budget has {s.size} entries but the partition has K={partition.k} blocks")
    if not np.issubdtype(s.dtype, np.integer) and not np.all(s == np.round(s)):
        raise ValidationError("budget entries must be integers")
    s = s.astype(int)
    cap = n * (n - 1) // 2
    if np.any(s < 0) or np.any(s > cap):
        raise ValidationError(f"budget entries must lie in [0, {cap}] for N={n}")
    return s


def top_fibers(flat: np.ndarray, s: int) -> np.ndarray:
    """Indices ``(i, j)`` (i > j) of the ``s`` strictly-lower fibers with largest l2 norm.

    Ties go to the lexicographically smaller ``(i, j)``.
    """
    n = int(round(np.sqrt(flat.shape[1])))
    i, j = np.tril_indices(n, -1)
    norms = np.linalg.norm(flat[:, i + n * j], axis=0)
    order = np.lexsort((j, i, -norms))
    keep = order[:s]
    return np.stack([i[keep], j[keep]], axis=1)


def cf_learn(naive: InverseCSDTensor, partition: FrequencyPartition, budget: Sequence[int]) -> InverseCSDTensor:
    if partition.m != naive.m:
        raise ValidationError(f"partition covers M={partition.m} frequencies, tensor has {naive.m}")
    s = validate_budget(budget, partition, naive.n)
    src = naive.slices
    out = np.zeros_like(src)
    diag = np.arange(naive.n)
    out[:, diag, diag] = src[:, diag, diag]
    for b, (lo, hi) in enumerate(partition.bounds(b) for b in range(partition.k)):
        sel = top_fibers(vec(src[lo:hi]), s[b])
        if sel.size == 0:
            continue
        i, j = sel[:, 0], sel[:, 1]
        out[lo:hi, i, j] = src[lo:hi, i, j]
        out[lo:hi, j, i] = np.conj(src[lo:hi, i, j])
    return InverseCSDTensor(out, naive.t)


def cf_objective(naive_flat: np.ndarray, estimate_flat: np.ndarray, mask: np.ndarray | str = "strict_lower") -> float:
    """Squared Frobenius distance between two block flattenings over the masked columns."""
    naive_flat = np.asarray(naive_flat)
    estimate_flat = np.asarray(estimate_flat)
    if naive_flat.shape != estimate_flat.shape:
        raise ValidationError(f"shape mismatch {naive_flat.shape} vs {estimate_flat.shape}")
    if isinstance(mask, str):
        n = int(round(np.sqrt(naive_flat.shape[1])))
        mask = selection_mask(n, mask)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (naive_flat.shape[1],):
        raise ValidationError("mask length does not match the number of columns")
    d = (naive_flat - estimate_flat)[:, mask]
    return float(np.sum(np.abs(d) ** 2))
