"""Band-limited synthetic panels with a known layered partial-correlation graph.

Each node is its own white innovation plus band-filtered, lagged and scaled
copies of its parents' signals, one filter per band edge. Per frequency the
inverse CSD is ``(I - B)^H (I - B)`` for the band's transfer matrix ``B``, so
its support in a band is exactly the moral graph of that band's DAG (up to
filter leakage).
"""

from __future__ import annotations

import graphlib
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .graph import KPCG
from .tensor_core import FrequencyPartition, TimeSeriesPanel, ValidationError, n_frequencies


@dataclass(frozen=True)
class Edge:
    parent: int
    child: int
    coef: float
    lag: int = 0


@dataclass(frozen=True)
class Band:
    """Frequency-index range ``start_k .. end_k`` (both inclusive) and its directed edges."""

    start_k: int
    end_k: int
    edges: tuple[Edge, ...] = ()


@dataclass(frozen=True)
class BandStructure:
    n: int
    bands: tuple[Band, ...] = field(default=())

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError("structure needs at least two nodes")
        for b in self.bands:
            if not 0 <= b.start_k <= b.end_k:
                raise ValidationError(f"bad band range [{b.start_k}, {b.end_k}]")
            for e in b.edges:
                if not (0 <= e.parent < self.n and 0 <= e.child < self.n) or e.parent == e.child:
                    raise ValidationError(f"bad edge {e.parent}->{e.child} for n={self.n}")
                if e.lag < 0 or not np.isfinite(e.coef):
                    raise ValidationError(f"edge {e.parent}->{e.child}: lag must be >= 0 and coef finite")
            dag = {}
            for e in b.edges:
                dag.setdefault(e.child, set()).add(e.parent)
            try:
                tuple(graphlib.TopologicalSorter(dag).static_order())
            except graphlib.CycleError as exc:
                raise ValidationError(f"band [{b.start_k}, {b.end_k}] edge list is cyclic") from exc

    def topological_order(self) -> list[int]:
        """Order of the union DAG; a cycle across bands makes the recursion unstable."""
        dag = {i: set() for i in range(self.n)}
        for b in self.bands:
            for e in b.edges:
                dag[e.child].add(e.parent)
        try:
            return list(graphlib.TopologicalSorter(dag).static_order())
        except graphlib.CycleError as exc:
            raise ValidationError("unstable structure: union of band edges has a directed cycle") from exc

    def validate_for(self, t: int) -> None:
        m = n_frequencies(t)
        for b in self.bands:
            if b.end_k > m - 1:
                raise ValidationError(f"band end {b.end_k} exceeds M-1 = {m - 1} for T={t}")
        self.topological_order()


def reference_structure(t: int = 1024) -> BandStructure:
    """N=6 nodes, two interaction bands splitting ``0 .. T/2`` in half (at ``k = 256`` for T = 1024)."""
    nyq = t // 2
    split = nyq // 2
    low = Band(
        0,
        split - 1,
        (
            Edge(0, 2, 0.8, 1),
            Edge(1, 2, -0.8, 0),
            Edge(2, 3, 0.8, 2),
            Edge(4, 5, -0.8, 1),
        ),
    )
    high = Band(
        split,
        nyq,
        (
            Edge(0, 3, 0.8, 0),
            Edge(1, 4, 0.8, 1),
            Edge(3, 5, -0.8, 2),
            Edge(4, 5, 0.8, 0),
            Edge(2, 4, -0.8, 3),
        ),
    )
    return BandStructure(6, (low, high))


# --- filters ------------------------------------------------------------------


def filter_taps(band: Band, t: int) -> np.ndarray:
    """Zero-phase windowed-sinc FIR for a band (frequencies in DFT bins, ``fs = T``).

    Cutoffs are pulled inside the band by about one transition width so the
    stopband starts near the band edge.
    """
    numtaps = t // 8 + 1
    nyq = t // 2
    width = band.end_k - band.start_k + 1
    guard = min(3.0 * t / numtaps, 0.25 * width)
    lo = band.start_k + guard if band.start_k > 0 else 0.0
    hi = band.end_k - guard if band.end_k < nyq else float(nyq)
    if hi <= lo:
        raise ValidationError(f"band [{band.start_k}, {band.end_k}] too narrow for T={t}")
    if lo == 0 and hi >= nyq:
        taps = np.zeros(numtaps)
        taps[numtaps // 2] = 1.0
        return taps
    if lo == 0:
        return signal.firwin(numtaps, hi, fs=t)
    if hi >= nyq:
        return signal.firwin(numtaps, lo, pass_zero=False, fs=t)
    return signal.firwin(numtaps, [lo, hi], pass_zero=False, fs=t)


def _depth(structure: BandStructure) -> int:
    depth = {i: 0 for i in range(structure.n)}
    for node in structure.topological_order():
        for b in structure.bands:
            for e in b.edges:
                if e.child == node:
                    depth[node] = max(depth[node], depth[e.parent] + 1)
    return max(depth.values())


def _simulate(structure: BandStructure, t: int, noise: np.ndarray, pad: int) -> np.ndarray:
    """``noise`` has shape ``(R, N, T + 2 pad)``; returns ``(R, N, T)``."""
    y = noise.copy()
    for node in structure.topological_order():
        for b in structure.bands:
            taps = None
            for e in b.edges:
                if e.child != node:
                    continue
                if taps is None:
                    taps = filter_taps(b, t)
                filt = signal.fftconvolve(y[:, e.parent], taps[None, :], mode="same", axes=-1)
                if e.lag:
                    filt = np.concatenate([np.zeros_like(filt[:, : e.lag]), filt[:, : -e.lag]], axis=1)
                y[:, node] += e.coef * filt
    return y[:, :, pad : pad + t]


def _pad(structure: BandStructure, t: int) -> int:
    max_lag = max((e.lag for b in structure.bands for e in b.edges), default=0)
    return (_depth(structure) + 1) * (t // 8 + 1) + max_lag


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(replicate)]))


def generate_batch(structure: BandStructure, t: int, seed: int, replicates: int, first: int = 0) -> np.ndarray:
    """Replicates ``first .. first+replicates-1`` stacked as ``(R, N, T)``."""
    structure.validate_for(t)
    if replicates < 1:
        raise ValidationError("need at least one replicate")
    pad = _pad(structure, t)
    length = t + 2 * pad
    noise = np.stack(
        [replicate_rng(seed, r).standard_normal((structure.n, length)) for r in range(first, first + replicates)]
    )
    return _simulate(structure, t, noise, pad)


def generate(structure: BandStructure, t: int, seed: int, replicate: int = 0) -> TimeSeriesPanel:
    return TimeSeriesPanel(generate_batch(structure, t, seed, 1, first=replicate)[0])


# --- ground truth ---------------------------------------------------------------


def moral_edges(n: int, edges) -> set:
    out = set()
    parents = {}
    for e in edges:
        out.add((max(e.parent, e.child), min(e.parent, e.child)))
        parents.setdefault(e.child, set()).add(e.parent)
    for ps in parents.values():
        for a, b in itertools.combinations(sorted(ps), 2):
            out.add((b, a))
    return out


def ground_truth_kpcg(structure: BandStructure, partition: FrequencyPartition) -> KPCG:
    layers = []
    for lo, hi in map(partition.bounds, range(partition.k)):
        edges = set()
        for b in structure.bands:
            if b.start_k <= hi - 1 and b.end_k >= lo:
                edges |= moral_edges(structure.n, b.edges)
        layers.append({pair: 1.0 for pair in sorted(edges)})
    return KPCG(structure.n, tuple(layers))


# --- I/O ------------------------------------------------------------------------


def structure_to_json_obj(structure: BandStructure) -> dict:
    return {
        "n": structure.n,
        "bands": [
            {
                "start_k": b.start_k,
                "end_k": b.end_k,
                "edges": [{"from": e.parent, "to": e.child, "coef": e.coef, "lag": e.lag} for e in b.edges],
            }
            for b in structure.bands
        ],
    }


def structure_from_json_obj(obj: dict) -> BandStructure:
    try:
        bands = tuple(
            Band(
                int(b["start_k"]),
                int(b["end_k"]),
                tuple(Edge(int(e["from"]), int(e["to"]), float(e["coef"]), int(e.get("lag", 0))) for e in b["edges"]),
            )
            for b in obj["bands"]
        )
        return BandStructure(int(obj["n"]), bands)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed structure JSON: {exc}") from exc


def load_structure(path: str | Path) -> BandStructure:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return structure_from_json_obj(obj)


def save_structure(structure: BandStructure, path: str | Path) -> None:
    Path(path).write_text(json.dumps(structure_to_json_obj(structure), indent=1))


def structure_hash(structure: BandStructure) -> str:
    blob = json.dumps(structure_to_json_obj(structure), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
