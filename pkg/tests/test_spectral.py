import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hermitian
from specgraph.spectral import (
    AutocovarianceSequence,
    SmoothingWindow,
    _extended_index,
    auto_half_size,
    center,
    hanning_window,
    naive_inverse,
    partial_coherence,
    partial_coherence_slices,
    periodogram,
    periodogram_from_panel,
    read_panel_csv,
    sample_autocovariance,
    smooth_periodogram,
    smoothed_periodogram,
    write_panel_csv,
)
from specgraph.tensor_core import CSDTensor, InverseCSDTensor, NumericalError, TimeSeriesPanel, ValidationError


def direct_periodogram(y):
    """Textbook double sum: autocovariance by explicit loops, then the DFT over all lags."""
    n, t = y.shape
    y = y - y.mean(axis=1, keepdims=True)
    out = np.zeros((t // 2 + 1, n, n), dtype=complex)
    for lag in range(-(t - 1), t):
        c = np.zeros((n, n))
        for s in range(t - abs(lag)):
            if lag >= 0:
                c += np.outer(y[:, s + lag], y[:, s])
            else:
                c += np.outer(y[:, s], y[:, s - lag])
        c /= t
        for k in range(t // 2 + 1):
            out[k] += c * np.exp(-2j * np.pi * k * lag / t)
    return out


def test_center_examples():
    p = center(TimeSeriesPanel(np.array([[5.0, 5, 5, 5], [1, 2, 3, 6]])))
    np.testing.assert_array_equal(p.data[0], [0, 0, 0, 0])
    np.testing.assert_array_equal(p.data[1], [-2, -1, 0, 3])
    again = center(p)
    np.testing.assert_allclose(again.data, p.data, atol=1e-15, rtol=0)


def test_autocovariance_hand_values():
    # row [1, -1, 1, -1]: C_0 = 1, C_1 = -3/4, C_2 = 2/4, C_3 = -1/4
    acov = sample_autocovariance(TimeSeriesPanel(np.array([[1.0, -1, 1, -1], [0, 0, 0, 0]])))
    assert [acov.at(l)[0, 0] for l in range(4)] == pytest.approx([1.0, -0.75, 0.5, -0.25], abs=1e-15)
    assert [acov.at(-l)[0, 0] for l in range(4)] == pytest.approx([1.0, -0.75, 0.5, -0.25], abs=1e-15)


@given(st.integers(2, 4), st.integers(4, 24), st.integers(0, 2**32 - 1))
def test_autocovariance_transpose_symmetry_exact(n, t, seed):
    y = np.random.default_rng(seed).standard_normal((n, t))
    acov = sample_autocovariance(TimeSeriesPanel(y))
    for l in range(t):
        np.testing.assert_array_equal(acov.at(-l), acov.at(l).T)


def test_white_noise_autocovariance_small_off_lag():
    y = np.random.default_rng(0).standard_normal((3, 4000))
    acov = sample_autocovariance(TimeSeriesPanel(y))
    c0 = np.linalg.norm(acov.at(0))
    assert max(np.linalg.norm(acov.at(l)) for l in range(1, 20)) < 0.1 * c0


def test_delta_autocovariance_is_flat():
    acov = AutocovarianceSequence(np.array([[[0.0]], [[1.0]], [[0.0]]]), t=2)
    np.testing.assert_allclose(periodogram(acov).slices[:, 0, 0], [1, 1], atol=1e-15)


@pytest.mark.parametrize("t", [4, 5, 16, 33, 64])
def test_periodogram_matches_direct_sum(t):
    y = np.random.default_rng(t).standard_normal((3, t))
    est = periodogram(sample_autocovariance(TimeSeriesPanel(y))).slices
    np.testing.assert_allclose(est, direct_periodogram(y), atol=1e-9, rtol=0)
    np.testing.assert_allclose(periodogram_from_panel(TimeSeriesPanel(y)).slices, est, atol=1e-9, rtol=0)


def test_cosine_concentrates_at_quarter_frequency():
    t = 16
    y = np.stack([np.cos(2 * np.pi * np.arange(t) / 4), np.zeros(t)])
    spec = periodogram(sample_autocovariance(TimeSeriesPanel(y))).slices[:, 0, 0]
    # |sum cos(2 pi n / 4) e^{-2 pi i k n / T}|^2 / T = (T/2)^2 / T = 4 at k = T/4
    assert spec[4].real == pytest.approx(4.0, abs=1e-12)
    np.testing.assert_allclose(np.delete(spec, 4), 0, atol=1e-12)


def test_hanning_weights():
    assert hanning_window(0).weights.tolist() == [1.0]
    np.testing.assert_allclose(hanning_window(1).weights, [0.25, 0.5, 0.25], atol=1e-16)
    for h in range(0, 12):
        w = hanning_window(h).weights
        assert abs(w.sum() - 1) < 1e-12
        np.testing.assert_array_equal(w, w[::-1])
        assert np.all(w > 0)
    assert auto_half_size(1024) == 32 and auto_half_size(99) == 9


def test_window_validation():
    with pytest.raises(ValidationError):
        SmoothingWindow(1, np.array([0.2, 0.5, 0.3]))
    with pytest.raises(ValidationError):
        SmoothingWindow(1, np.array([0.5, 0.5]))


def _diag_tensor(values, t):
    s = np.zeros((len(values), 2, 2), dtype=complex)
    s[:, 0, 0] = values
    s[:, 1, 1] = 1
    return CSDTensor(s, t)


def test_smoothing_hand_convolution():
    out = smooth_periodogram(_diag_tensor([0, 0, 1, 0, 0], 8), SmoothingWindow(1, np.array([0.25, 0.5, 0.25])))
    np.testing.assert_allclose(out.slices[:, 0, 0], [0, 0.25, 0.5, 0.25, 0], atol=1e-16)


def test_smoothing_even_reflection_at_edges():
    # impulse at k=0 reflects onto itself: k=-1 -> 1, so the k=0 output sees [0, 1, 0] around it
    out = smooth_periodogram(_diag_tensor([1, 0, 0, 0, 0], 8), SmoothingWindow(1, np.array([0.25, 0.5, 0.25])))
    np.testing.assert_allclose(out.slices[:, 0, 0], [0.5, 0.25, 0, 0, 0], atol=1e-16)
    assert _extended_index(5, 9, 2).tolist() == [2, 1, 0, 1, 2, 3, 4, 4, 3]
    assert _extended_index(5, 8, 2).tolist() == [2, 1, 0, 1, 2, 3, 4, 3, 2]


def test_smoothing_identity_and_constant(rng):
    s = random_hermitian(rng, 3, m=9)
    raw = CSDTensor(s, 16)
    np.testing.assert_array_equal(smooth_periodogram(raw, hanning_window(0)).slices, s)
    const = CSDTensor(np.repeat(s[:1], 9, axis=0), 16)
    for h in range(5):
        np.testing.assert_allclose(smooth_periodogram(const, hanning_window(h)).slices, const.slices, atol=1e-14)
    with pytest.raises(ValidationError):
        smooth_periodogram(raw, hanning_window(5))


@given(st.integers(0, 2**32 - 1), st.integers(0, 4))
def test_smoothing_preserves_hermitian(seed, h):
    s = random_hermitian(np.random.default_rng(seed), 3, m=9)
    out = smooth_periodogram(CSDTensor(s, 17), hanning_window(h)).slices
    np.testing.assert_array_equal(out, np.conj(np.swapaxes(out, 1, 2)))


def test_naive_inverse_examples(rng):
    eye = CSDTensor(np.repeat(np.eye(3)[None], 5, axis=0).astype(complex), 8)
    np.testing.assert_allclose(naive_inverse(eye).slices, eye.slices, atol=0)
    d = CSDTensor(np.repeat(np.diag([2.0, 4.0])[None], 3, axis=0).astype(complex), 4)
    np.testing.assert_allclose(naive_inverse(d).slices[0], np.diag([0.5, 0.25]), atol=1e-15)
    s = random_hermitian(rng, 4, m=5, pd=True)
    p = naive_inverse(CSDTensor(s, 8)).slices
    for k in range(5):
        assert np.abs(s[k] @ p[k] - np.eye(4)).max() <= 1e-8


def test_naive_inverse_singular_names_frequency():
    s = np.repeat(np.eye(2)[None], 5, axis=0).astype(complex)
    s[3] = [[1, 1], [1, 1]]
    with pytest.raises(NumericalError, match="k=3"):
        naive_inverse(CSDTensor(s, 8))


def test_partial_coherence_examples():
    r = partial_coherence_slices(np.array([np.eye(2), [[1, 0.5], [0.5, 1]], [[4, 2], [2, 4]]], dtype=complex))
    np.testing.assert_allclose(r[0], -np.eye(2))
    assert r[1, 0, 1] == pytest.approx(-0.5) and r[2, 1, 0] == pytest.approx(-0.5)
    np.testing.assert_allclose(np.diagonal(r, axis1=1, axis2=2), -1)


def test_partial_coherence_error_names_pair():
    p = np.repeat(np.eye(3)[None], 3, axis=0).astype(complex)
    p[2, 1, 1] = -1
    with pytest.raises(ValidationError, match=r"i=1, k=2"):
        partial_coherence(CSDTensor(p, 4))


@given(st.integers(0, 2**32 - 1))
def test_partial_coherence_diagonal_rescaling_invariance(seed):
    rng = np.random.default_rng(seed)
    p = random_hermitian(rng, 4, m=3, pd=True)
    d = np.exp(rng.uniform(-2, 2, size=(3, 4)))
    scaled = d[:, :, None] * p * d[:, None, :]
    np.testing.assert_allclose(partial_coherence_slices(scaled), partial_coherence_slices(p), atol=1e-12, rtol=0)
    assert np.abs(partial_coherence_slices(p)).max() <= 1 + 1e-9


def test_smoothed_periodogram_averaging(tmp_path):
    y = np.random.default_rng(3).standard_normal((3, 32))
    one = smoothed_periodogram([TimeSeriesPanel(y)], 2)
    two = smoothed_periodogram([TimeSeriesPanel(y), TimeSeriesPanel(y)], 2)
    np.testing.assert_allclose(two.slices, one.slices, atol=1e-14)
    with pytest.raises(ValidationError):
        smoothed_periodogram([TimeSeriesPanel(y), TimeSeriesPanel(y[:, :16])], 2)
    # averaging is linear: mean of per-panel smoothed periodograms
    z = np.random.default_rng(4).standard_normal((3, 32))
    mixed = smoothed_periodogram(np.stack([y, z]), 2)
    sep = 0.5 * (one.slices + smoothed_periodogram([TimeSeriesPanel(z)], 2).slices)
    np.testing.assert_allclose(mixed.slices, sep, atol=1e-13)


def test_panel_csv_roundtrip(tmp_path):
    y = np.random.default_rng(5).standard_normal((3, 10))
    write_panel_csv(TimeSeriesPanel(y), tmp_path / "p.csv")
    np.testing.assert_array_equal(read_panel_csv(tmp_path / "p.csv").data, y)
    (tmp_path / "h.csv").write_text("a,b,c,d\n1,2,3,4\n5,6,7,9\n")
    assert read_panel_csv(tmp_path / "h.csv", header=True).data.tolist() == [[1, 2, 3, 4], [5, 6, 7, 9]]
    (tmp_path / "bad.csv").write_text("1,2,x,4\n1,2,3,4\n")
    with pytest.raises(ValidationError):
        read_panel_csv(tmp_path / "bad.csv")
