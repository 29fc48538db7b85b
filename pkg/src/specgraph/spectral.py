"""Periodogram, smoothing, naive inverse and partial coherence."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .tensor_core import (
    CSDTensor,
    InverseCSDTensor,
    NumericalError,
    TimeSeriesPanel,
    ValidationError,
    hermitianize,
    n_frequencies,
)

RCOND_FLOOR = 1e-13


@dataclass(frozen=True)
class AutocovarianceSequence:
    """Sample autocovariance for lags ``-(T-1) .. T-1``; ``matrices[l + T - 1]`` is ``C_l``."""

    matrices: np.ndarray
    t: int

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-(self.t - 1), self.t)

    def at(self, lag: int) -> np.ndarray:
        return self.matrices[lag + self.t - 1]


@dataclass(frozen=True)
class SmoothingWindow:
    half_size: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if self.half_size < 0 or w.shape != (2 * self.half_size + 1,):
            raise ValidationError("window must have 2*half_size + 1 weights")
        if np.any(w < 0) or not np.allclose(w, w[::-1], rtol=0, atol=1e-15):
            raise ValidationError("window weights must be nonnegative and symmetric")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("window weights must sum to 1")
        object.__setattr__(self, "weights", w)


def center(panel: TimeSeriesPanel) -> TimeSeriesPanel:
    data = panel.data - panel.data.mean(axis=1, keepdims=True)
    return TimeSeriesPanel(data, panel.sample_rate)


def sample_autocovariance(panel: TimeSeriesPanel) -> AutocovarianceSequence:
    """Biased sample autocovariance ``C_l = (1/T) sum_t y[t+l] y[t]^T`` of the centered panel."""
    y = center(panel).data
    n, t = y.shape
    if t < 2:
        raise ValidationError("need at least two samples")
    nfft = 2 * t
    yf = np.fft.fft(y, nfft, axis=1)
    # cross[i, j, l] = sum_t y_i[t + l] y_j[t]
    cross = np.fft.ifft(yf[:, None, :] * np.conj(yf[None, :, :]), axis=2).real / t
    lags = np.arange(-(t - 1), t)
    mats = np.moveaxis(cross[:, :, lags % nfft], 2, 0)
    # exact transpose symmetry C_{-l} = C_l^T
    pos = mats[t - 1 :]
    mats = np.concatenate([np.swapaxes(pos[:0:-1], 1, 2), pos], axis=0)
    return AutocovarianceSequence(mats, t)


def periodogram(acov: AutocovarianceSequence) -> CSDTensor:
    """DFT of the autocovariance at the Fourier frequencies ``k / T``, ``k = 0 .. T//2``."""
    t = acov.t
    # fold lags modulo T: e^{-2 pi i k l / T} is T-periodic in l
    folded = np.zeros((t,) + acov.matrices.shape[1:])
    np.add.at(folded, acov.lags % t, acov.matrices)
    spec = np.fft.fft(folded, axis=0)[: n_frequencies(t)]
    return CSDTensor(hermitianize(spec), t)


def periodogram_from_panel(panel: TimeSeriesPanel) -> CSDTensor:
    """Same estimate as ``periodogram(sample_autocovariance(panel))`` via ``Y_k Y_k^H / T``."""
    return CSDTensor(raw_periodogram(center(panel).data), panel.t)


def raw_periodogram(y: np.ndarray) -> np.ndarray:
    """Periodogram slices of centered data ``y`` with shape ``(..., N, T)``; returns ``(..., M, N, N)``."""
    t = y.shape[-1]
    yf = np.fft.rfft(y, axis=-1)  # (..., N, M)
    yf = np.swapaxes(yf, -1, -2)  # (..., M, N)
    return yf[..., :, None] * np.conj(yf[..., None, :]) / t


def hanning_window(half_size: int) -> SmoothingWindow:
    if half_size < 0:
        raise ValidationError("half-window size must be nonnegative")
    j = np.arange(-half_size, half_size + 1)
    w = np.cos(np.pi * j / (2 * half_size + 2)) ** 2
    w = w / w.sum()
    w = 0.5 * (w + w[::-1])
    return SmoothingWindow(half_size, w)


def auto_half_size(t_min: int) -> int:
    return int(np.floor(np.sqrt(t_min)))


def _extended_index(m: int, t: int, half: int) -> np.ndarray:
    """Source index for frequencies ``-half .. M-1+half`` under even reflection.

    Index ``-j`` maps to ``j`` and index ``T - j`` maps to ``j``, so for odd
    ``T`` the last retained frequency is repeated once.
    """
    k = np.abs(np.arange(-half, m + half))
    return np.where(k > t // 2, t - k, k)


def smooth_periodogram(raw: CSDTensor, window: SmoothingWindow) -> CSDTensor:
    """Convolve each entry along frequency with the window.

    Out-of-range frequencies are filled by even reflection at ``k = 0`` and
    ``k = M-1``.
    """
    half = window.half_size
    if 2 * half + 1 > raw.m:
        raise ValidationError(f"window span {2 * half + 1} exceeds M = {raw.m}")
    if half == 0:
        return CSDTensor(raw.slices.copy(), raw.t)
    ext = raw.slices[_extended_index(raw.m, raw.t, half)]
    out = np.zeros_like(raw.slices)
    for j, w in enumerate(window.weights):
        out += w * ext[j : j + raw.m]
    return CSDTensor(hermitianize(out), raw.t)


def naive_inverse(smoothed: CSDTensor) -> InverseCSDTensor:
    """Slice-wise inverse, Hermitianized. Near-singular slices raise ``NumericalError``."""
    s = smoothed.slices
    cond = np.linalg.cond(s)
    bad = np.flatnonzero(~np.isfinite(cond) | (1.0 / cond < RCOND_FLOOR))
    if bad.size:
        raise NumericalError(f"CSD slice at frequency index k={bad[0]} is singular or near-singular")
    return InverseCSDTensor(hermitianize(np.linalg.inv(s)), smoothed.t)


def partial_coherence_slices(p: np.ndarray) -> np.ndarray:
    diag = np.real(np.diagonal(p, axis1=-2, axis2=-1))
    if np.any(diag <= 0):
        k, i = np.argwhere(diag <= 0)[0]
        raise ValidationError(f"nonpositive diagonal entry at (i={i}, k={k})")
    d = 1.0 / np.sqrt(diag)
    return -(d[..., :, None] * p * d[..., None, :])


def partial_coherence(inv: CSDTensor) -> CSDTensor:
    """``R_k = -D_k P_k D_k`` with ``D_k = diag(P_k)^{-1/2}``."""
    return CSDTensor(partial_coherence_slices(inv.slices), inv.t)


# --- multi-panel estimation ------------------------------------------------


def smoothed_periodogram(panels: Iterable[TimeSeriesPanel] | np.ndarray, half_size: int) -> CSDTensor:
    """Mean of the smoothed periodograms of several panels (Hanning window).

    ``panels`` may be an array of shape ``(R, N, T)``. Smoothing is linear, so
    the raw periodograms are averaged first and smoothed once.
    """
    if isinstance(panels, np.ndarray):
        y = np.asarray(panels, dtype=float)
        if y.ndim == 2:
            y = y[None]
    else:
        panels = list(panels)
        if not panels:
            raise ValidationError("no panels given")
        shapes = {p.data.shape for p in panels}
        if len(shapes) != 1:
            raise ValidationError(f"panels disagree on (N, T): {sorted(shapes)}")
        y = np.stack([p.data for p in panels])
    y = y - y.mean(axis=-1, keepdims=True)
    t = y.shape[-1]
    raw = np.zeros((n_frequencies(t), y.shape[1], y.shape[1]), dtype=complex)
    for chunk in np.array_split(y, max(1, len(y) // 64)):
        raw += raw_periodogram(chunk).sum(axis=0)
    raw /= len(y)
    return smooth_periodogram(CSDTensor(hermitianize(raw), t), hanning_window(half_size))


def read_panel_csv(path: str | Path, header: bool = False) -> TimeSeriesPanel:
    """One series per row, comma-separated; optional header row is skipped."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: cannot parse CSV ({exc})") from exc
    return TimeSeriesPanel(data)


def write_panel_csv(panel: TimeSeriesPanel, path: str | Path) -> None:
    np.savetxt(path, panel.data, delimiter=",", fmt="%.17g")
