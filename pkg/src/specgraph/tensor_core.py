"""Frequency-indexed Hermitian tensors, partitions, flattenings and masks.

Tensors are stored frequency-major as complex arrays of shape ``(M, N, N)``.
Vectorization is column-major throughout: entry ``(i, j)`` of an ``N x N``
slice lives at position ``i + N * j`` of the vectorized slice (0-based).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

HERMITIAN_RTOL = 1e-10
BINARY_MAGIC = b"SPECGRAPHTENSOR1"


class SpecGraphError(Exception):
    """Base class for library errors."""


class ValidationError(SpecGraphError, ValueError):
    """Invalid input: wrong shapes, out-of-range indices, bad configs."""


class NumericalError(SpecGraphError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


def _frozen(a: np.ndarray, dtype=None) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeSeriesPanel:
    """``N x T`` real samples of a (nominally) zero-mean stationary process."""

    data: np.ndarray
    sample_rate: float | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ValidationError(f"panel must be 2-D (N x T), got shape {data.shape}")
        n, t = data.shape
        if n < 2 or t < 4:
            raise ValidationError(f"panel needs N >= 2 and T >= 4, got N={n}, T={t}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("panel contains non-finite values")
        if self.sample_rate is not None and not self.sample_rate > 0:
            raise ValidationError("sample_rate must be positive")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> int:
        return self.data.shape[1]


def hermitian_defect(slices: np.ndarray) -> np.ndarray:
    """Per-slice ``max|A - A^H|`` relative to ``max|A|`` (0 for zero slices)."""
    diff = np.abs(slices - np.conj(np.swapaxes(slices, -1, -2))).max(axis=(-2, -1))
    scale = np.abs(slices).max(axis=(-2, -1))
    return np.divide(diff, scale, out=np.zeros_like(diff), where=scale > 0)


def hermitianize(slices: np.ndarray) -> np.ndarray:
    return 0.5 * (slices + np.conj(np.swapaxes(slices, -1, -2)))


def n_frequencies(t: int) -> int:
    return t // 2 + 1


@dataclass(frozen=True)
class CSDTensor:
    """Cross-spectral density slices at ``nu_k = k / T``, ``k = 0 .. T // 2``."""

    slices: np.ndarray
    t: int

    def __post_init__(self):
        s = np.asarray(self.slices, dtype=complex)
        if s.ndim != 3 or s.shape[1] != s.shape[2]:
            raise ValidationError(f"slices must have shape (M, N, N), got {s.shape}")
        if s.shape[0] != n_frequencies(self.t):
            raise ValidationError(
                f"expected M = T//2 + 1 = {n_frequencies(self.t)} slices, got {s.shape[0]}"
            )
        bad = np.flatnonzero(hermitian_defect(s) > HERMITIAN_RTOL)
        if bad.size:
            raise ValidationError(f"slice k={bad[0]} is not Hermitian")
        object.__setattr__(self, "slices", _frozen(s))

    @property
    def n(self) -> int:
        return self.slices.shape[1]

    @property
    def m(self) -> int:
        return self.slices.shape[0]

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.m) / self.t


@dataclass(frozen=True)
class InverseCSDTensor(CSDTensor):
    """Inverse CSD slices.

    ``epsilon`` is the positive-definiteness floor the producer guarantees;
    ``None`` means no guarantee (e.g. the naive slice-wise inverse).
    """

    epsilon: float | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")

    @property
    def pd_guaranteed(self) -> bool:
        return self.epsilon is not None


@dataclass(frozen=True)
class FrequencyPartition:
    """``K`` contiguous frequency blocks covering ``0 .. M-1``."""

    starts: tuple[int, ...]
    m: int

    def __post_init__(self):
        starts = tuple(int(s) for s in self.starts)
        object.__setattr__(self, "starts", starts)
        if not starts or starts[0] != 0:
            raise ValidationError("partition must start at frequency index 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValidationError("partition starts must be strictly increasing")
        if starts[-1] > self.m - 1:
            raise ValidationError(f"last block start {starts[-1]} exceeds M-1 = {self.m - 1}")
        if not 0 < len(starts) < self.m:
            raise ValidationError(f"need 0 < K < M, got K={len(starts)}, M={self.m}")

    @classmethod
    def equal(cls, k: int, m: int) -> "FrequencyPartition":
        """``k`` blocks of (nearly) equal size; the remainder goes to the last block."""
        if not 0 < k < m:
            raise ValidationError(f"need 0 < K < M, got K={k}, M={m}")
        size = m // k
        return cls(tuple(i * size for i in range(k)), m)

    @property
    def k(self) -> int:
        return len(self.starts)

    def bounds(self, block: int) -> tuple[int, int]:
        """Half-open index range ``[lo, hi)`` of a block (0-based block index)."""
        if not 0 <= block < self.k:
            raise ValidationError(f"block index {block} out of range for K={self.k}")
        hi = self.starts[block + 1] if block + 1 < self.k else self.m
        return self.starts[block], hi

    def blocks(self) -> list[range]:
        return [range(*self.bounds(b)) for b in range(self.k)]

    def block_of(self) -> np.ndarray:
        """Block index of every frequency, length ``M``."""
        out = np.empty(self.m, dtype=int)
        for b in range(self.k):
            lo, hi = self.bounds(b)
            out[lo:hi] = b
        return out


def vec(a: np.ndarray) -> np.ndarray:
    """Column-major vectorization of the trailing two axes."""
    a = np.asarray(a)
    return np.swapaxes(a, -1, -2).reshape(a.shape[:-2] + (-1,))


def unvec(v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (n, n)), -1, -2)


def flatten_block(tensor: CSDTensor, partition: FrequencyPartition, block: int) -> np.ndarray:
    """Block flattening: ``|K_m| x N^2`` matrix whose column ``i + N j`` is the fiber ``[P_k]_ij``."""
    if partition.m != tensor.m:
        raise ValidationError("partition does not match tensor length")
    lo, hi = partition.bounds(block)
    return vec(tensor.slices[lo:hi])


def unflatten_block(flat: np.ndarray, n: int) -> np.ndarray:
    flat = np.asarray(flat)
    if flat.ndim != 2 or flat.shape[1] != n * n:
        raise ValidationError(f"flattening must be (|K|, {n * n}), got {flat.shape}")
    return unvec(flat, n)


MASK_KINDS = ("strict_lower", "off_diagonal")


def selection_mask(n: int, kind: str) -> np.ndarray:
    """Boolean vector of length ``N^2`` marking retained fiber columns."""
    i, j = np.divmod(np.arange(n * n), n)[::-1]  # position p = i + n*j
    if kind == "strict_lower":
        return i > j
    if kind == "off_diagonal":
        return i != j
    raise ValidationError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")


def apply_mask(flat: np.ndarray, mask: np.ndarray) -> np.ndarray:
    flat = np.asarray(flat)
    mask = np.asarray(mask, dtype=bool)
    if flat.shape[-1] != mask.shape[0]:
        raise ValidationError(f"mask length {mask.shape[0]} does not match {flat.shape[-1]} columns")
    return np.where(mask, flat, 0)


def pair_index(i: int, j: int, n: int) -> int:
    """Column of fiber ``(i, j)`` in a block flattening (0-based)."""
    return i + n * j


# --- serialization --------------------------------------------------------


def tensor_to_json_obj(tensor: CSDTensor) -> dict:
    s = tensor.slices
    obj = {
        "n": tensor.n,
        "t": tensor.t,
        "m": tensor.m,
        "slices": np.stack([s.real, s.imag], axis=-1).tolist(),
    }
    if isinstance(tensor, InverseCSDTensor):
        obj["kind"] = "inverse"
        obj["epsilon"] = tensor.epsilon
    return obj


def tensor_from_json_obj(obj: dict) -> CSDTensor:
    try:
        n, t, m = int(obj["n"]), int(obj["t"]), int(obj["m"])
        raw = np.asarray(obj["slices"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed CSDT-JSON: {exc}") from exc
    if raw.shape != (m, n, n, 2):
        raise ValidationError(f"CSDT-JSON slices have shape {raw.shape}, expected {(m, n, n, 2)}")
    slices = raw[..., 0] + 1j * raw[..., 1]
    if obj.get("kind") == "inverse":
        return InverseCSDTensor(slices, t, epsilon=obj.get("epsilon"))
    return CSDTensor(slices, t)


def tensor_to_bytes(tensor: CSDTensor) -> bytes:
    header = BINARY_MAGIC + struct.pack("<QQQ", tensor.n, tensor.t, tensor.m)
    return header + np.ascontiguousarray(tensor.slices, dtype="<c16").tobytes()


def tensor_from_bytes(buf: bytes, inverse: bool = False) -> CSDTensor:
    if buf[:16] != BINARY_MAGIC:
        raise ValidationError("not a binary tensor file (bad magic)")
    n, t, m = struct.unpack("<QQQ", buf[16:40])
    body = buf[40:]
    if len(body) != m * n * n * 16:
        raise ValidationError("binary tensor payload has the wrong length")
    slices = np.frombuffer(body, dtype="<c16").reshape(m, n, n).astype(complex)
    return InverseCSDTensor(slices, t) if inverse else CSDTensor(slices, t)


def save_tensor(tensor: CSDTensor, path: str | Path) -> None:
    """Write CSDT-JSON, or the binary form when the suffix is ``.bin``."""
    path = Path(path)
    if path.suffix == ".bin":
        path.write_bytes(tensor_to_bytes(tensor))
    else:
        path.write_text(json.dumps(tensor_to_json_obj(tensor)))


def load_tensor(path: str | Path, inverse: bool = False) -> CSDTensor:
    path = Path(path)
    if path.suffix == ".bin":
        return tensor_from_bytes(path.read_bytes(), inverse=inverse)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    tensor = tensor_from_json_obj(obj)
    if inverse and not isinstance(tensor, InverseCSDTensor):
        tensor = InverseCSDTensor(tensor.slices, tensor.t)
    return tensor


def parse_blocks(spec: str | Sequence[int], m: int) -> FrequencyPartition:
    """Partition from comma-separated start indices, e.g. ``"0,64,448"``."""
    if isinstance(spec, str):
        try:
            starts = [int(s) for s in spec.split(",") if s.strip()]
        except ValueError as exc:
            raise ValidationError(f"bad block list {spec!r}") from exc
    else:
        starts = list(spec)
    return FrequencyPartition(tuple(starts), m)
