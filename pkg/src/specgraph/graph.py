"""Layered partial-correlation graphs: extraction, distance and I/O."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .spectral import partial_coherence_slices
from .tensor_core import CSDTensor, FrequencyPartition, ValidationError

DEFAULT_THRESHOLD = 0.05


class DegenerateBlockWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KPCG:
    """``K`` undirected edge layers over ``n`` nodes.

    Each layer maps a pair ``(i, j)`` with ``i > j`` (0-based) to its weight.
    """

    n: int
    layers: tuple[dict, ...]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        layers = tuple(dict(layer) for layer in self.layers)
        for layer in layers:
            for i, j in layer:
                if not (0 <= j < i < self.n):
                    raise ValidationError(f"edge ({i}, {j}) is not a valid pair with i > j for n={self.n}")
        object.__setattr__(self, "layers", layers)

    @property
    def k(self) -> int:
        return len(self.layers)

    def edge_sets(self) -> list[set]:
        return [set(layer) for layer in self.layers]

    def cardinalities(self) -> list[int]:
        return [len(layer) for layer in self.layers]

    @classmethod
    def from_edge_sets(cls, n: int, edge_sets) -> "KPCG":
        layers = []
        for edges in edge_sets:
            layer = {}
            for a, b in edges:
                if a == b:
                    raise ValidationError("self-loops are not allowed")
                layer[(max(a, b), min(a, b))] = 1.0
            layers.append(layer)
        return cls(n, tuple(layers))


def fiber_scores(inv: CSDTensor, partition: FrequencyPartition) -> np.ndarray:
    """Per-block l2 norm of every partial-coherence fiber, shape ``(K, N, N)``."""
    if partition.m != inv.m:
        raise ValidationError(f"partition covers M={partition.m} frequencies, tensor has {inv.m}")
    r = partial_coherence_slices(inv.slices)
    return np.stack([np.linalg.norm(r[lo:hi], axis=0) for lo, hi in map(partition.bounds, range(partition.k))])


def extract_kpcg(
    inv: CSDTensor,
    partition: FrequencyPartition,
    threshold: float = DEFAULT_THRESHOLD,
    global_normalization: bool = False,
) -> KPCG:
    """Normalize fiber scores to [0, 1] and keep pairs scoring strictly above ``threshold``."""
    if not 0 <= threshold < 1:
        raise ValidationError("threshold must lie in [0, 1)")
    n = inv.n
    scores = fiber_scores(inv, partition)
    i, j = np.tril_indices(n, -1)
    pair_scores = scores[:, i, j]  # (K, n_pairs)
    notes = []
    if global_normalization:
        lo = np.full((partition.k, 1), pair_scores.min())
        hi = np.full((partition.k, 1), pair_scores.max())
    else:
        lo = pair_scores.min(axis=1, keepdims=True)
        hi = pair_scores.max(axis=1, keepdims=True)
    span = hi - lo
    degenerate = span[:, 0] <= 0
    norm = np.divide(pair_scores - lo, span, out=np.zeros_like(pair_scores), where=span > 0)
    layers = []
    for b in range(partition.k):
        if degenerate[b]:
            msg = f"block {b}: all fiber scores equal, normalization undefined; no edges emitted"
            notes.append(msg)
            warnings.warn(msg, DegenerateBlockWarning, stacklevel=2)
            layers.append({})
            continue
        keep = norm[b] > threshold
        layers.append({(int(a), int(c)): float(w) for a, c, w in zip(i[keep], j[keep], norm[b, keep])})
    return KPCG(n, tuple(layers), tuple(notes))


def shd(estimated: KPCG, truth: KPCG) -> int:
    """Structural Hamming distance summed over layers."""
    if estimated.n != truth.n or estimated.k != truth.k:
        raise ValidationError(
            f"graphs differ in shape: (n={estimated.n}, K={estimated.k}) vs (n={truth.n}, K={truth.k})"
        )
    return sum(len(a ^ b) for a, b in zip(estimated.edge_sets(), truth.edge_sets()))


# --- I/O --------------------------------------------------------------------


def kpcg_to_json_obj(g: KPCG) -> dict:
    return {
        "n": g.n,
        "k": g.k,
        "layers": [[[i + 1, j + 1, w] for (i, j), w in sorted(layer.items())] for layer in g.layers],
    }


def kpcg_from_json_obj(obj: dict) -> KPCG:
    try:
        n, k = int(obj["n"]), int(obj["k"])
        layers = [{(int(i) - 1, int(j) - 1): float(w) for i, j, w in layer} for layer in obj["layers"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed KPCG JSON: {exc}") from exc
    if len(layers) != k:
        raise ValidationError(f"KPCG JSON declares k={k} but has {len(layers)} layers")
    return KPCG(n, tuple(layers))


def save_kpcg(g: KPCG, path: str | Path) -> None:
    Path(path).write_text(json.dumps(kpcg_to_json_obj(g), indent=1))


def load_kpcg(path: str | Path) -> KPCG:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return kpcg_from_json_obj(obj)


def write_edge_csv(g: KPCG, path: str | Path) -> None:
    """Long-format edge list: ``layer,i,j,weight`` (1-based layer and node indices)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "i", "j", "weight"])
        for m, layer in enumerate(g.layers):
            for (i, j), wt in sorted(layer.items()):
                w.writerow([m + 1, i + 1, j + 1, repr(wt)])
