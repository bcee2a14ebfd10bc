import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from speechxfer.core import ConfigError, DegenerateInputError, Epoch, InputError, LabeledDataset
from speechxfer.preprocess import (
    bandpass,
    class_covariance,
    common_average_reference,
    shrink,
    trial_covariance,
)

from conftest import random_spd

FS = 250.0


def zero_phase_gain(f, band, fs, order=4):
    """|H(f)|^2 of a bilinear-transformed Butterworth band-pass (both passes).

    Derived from the analog prototype: with prewarped edges
    W = 2 fs tan(pi f_edge / fs) the band-pass magnitude is
    1 / (1 + ((W^2 - W0^2) / (B W))^(2N)), W0^2 = Wl Wh, B = Wh - Wl.
    """
    warp = lambda x: 2 * fs * np.tan(np.pi * x / fs)
    wl, wh, w = warp(band[0]), warp(band[1]), warp(f)
    ratio = (w**2 - wl * wh) / ((wh - wl) * w)
    return 1.0 / (1.0 + ratio ** (2 * order))


def sine_epoch(freq, seconds=2.0, channels=2):
    t = np.arange(int(seconds * FS)) / FS
    return Epoch(np.tile(np.sin(2 * np.pi * freq * t), (channels, 1)), FS)


def rms(x):
    return np.sqrt(np.mean(x**2))


def test_oracle_sanity():
    band = (8.0, 30.0)
    centre = np.sqrt(8.0 * 30.0)
    assert zero_phase_gain(centre, band, FS) > 0.995
    assert zero_phase_gain(60.0, band, FS) < 0.01
    # a -3 dB per pass edge is a 0.5 power gain for the squared response
    assert zero_phase_gain(8.0, band, FS) == pytest.approx(0.5)


def test_passband_centre():
    band = (8.0, 30.0)
    centre = np.sqrt(8.0 * 30.0)
    x = sine_epoch(centre)
    ratio = rms(bandpass(x, band).data) / rms(x.data)
    assert ratio >= 0.99
    assert ratio == pytest.approx(zero_phase_gain(centre, band, FS), abs=0.01)


def test_stopband_twice_upper_edge():
    band = (8.0, 30.0)
    x = sine_epoch(60.0)
    ratio = rms(bandpass(x, band).data) / rms(x.data)
    # whole epoch incl. edge transients; the interior is checked against the oracle below
    assert ratio <= 0.05


@pytest.mark.parametrize("freq", [3.0, 10.0, 20.0, 45.0, 80.0])
def test_matches_analytic_response_in_interior(freq):
    band = (8.0, 30.0)
    x = sine_epoch(freq, seconds=8.0, channels=2)
    y = bandpass(x, band).data
    mid = slice(500, -500)
    assert rms(y[:, mid]) / rms(x.data[:, mid]) == pytest.approx(
        zero_phase_gain(freq, band, FS), abs=2e-3
    )


def test_zero_in_zero_out():
    z = Epoch(np.zeros((3, 100)), FS)
    assert np.array_equal(bandpass(z, (8, 30)).data, z.data)


def test_shape_preserved_and_zero_phase():
    x = sine_epoch(15.0, seconds=4.0)
    y = bandpass(x, (8, 30)).data
    assert y.shape == x.data.shape
    mid = slice(250, -250)
    # zero phase: output stays in phase with the input
    assert np.corrcoef(x.data[0, mid], y[0, mid])[0, 1] > 0.999


@pytest.mark.parametrize("band", [(0.0, 30.0), (30.0, 8.0), (8.0, 125.0), (8.0, 200.0)])
def test_band_outside_nyquist(band):
    with pytest.raises(ConfigError):
        bandpass(sine_epoch(10.0), band)


def test_short_epoch_filters():
    x = Epoch(np.random.default_rng(0).standard_normal((2, 8)), FS)
    assert bandpass(x, (8, 30)).data.shape == (2, 8)


@settings(max_examples=25, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2**32 - 1))
def test_bandpass_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 200))
    y = rng.standard_normal((3, 200))
    band = (4.0, 40.0)
    lhs = bandpass(Epoch(a * x + b * y, FS), band).data
    rhs = a * bandpass(Epoch(x, FS), band).data + b * bandpass(Epoch(y, FS), band).data
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    assert np.abs(lhs - rhs).max() <= 1e-9 * scale + 1e-12


def test_common_average_reference():
    x = np.random.default_rng(2).standard_normal((4, 5, 30))
    y = common_average_reference(x)
    assert np.allclose(y.sum(axis=1), 0.0, atol=1e-12)


# --------------------------------------------------------------------------
# covariances
# --------------------------------------------------------------------------


def test_identical_channels_rank_one():
    row = np.random.default_rng(0).standard_normal(64)
    cov = trial_covariance(Epoch(np.vstack([row, row]), FS)).matrix
    assert cov[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert cov[1, 1] == pytest.approx(0.5, abs=1e-15)
    assert np.linalg.matrix_rank(cov, tol=1e-12) == 1


def test_uncorrelated_channels_off_diagonals_vanish():
    # Monte-Carlo oracle: sample correlations of independent unit-variance
    # channels shrink like 1/sqrt(n); at 1e4 samples off-diagonals of the
    # trace-normalized matrix are ~0.25 * 0.01
    x = np.random.default_rng(3).standard_normal((4, 10_000))
    cov = trial_covariance(Epoch(x, FS)).matrix
    off = cov[~np.eye(4, dtype=bool)]
    assert np.abs(off).max() < 0.05


def test_trace_one_and_mean_removed():
    x = np.random.default_rng(4).standard_normal((6, 80)) + 100.0
    cov = trial_covariance(Epoch(x, FS)).matrix
    assert np.trace(cov) == pytest.approx(1.0, abs=1e-12)
    ref = np.cov(x, bias=True)
    assert np.allclose(cov, ref / np.trace(ref), atol=1e-14)


def test_zero_epoch_degenerate():
    with pytest.raises(DegenerateInputError):
        trial_covariance(Epoch(np.zeros((2, 10)), FS))


def _ds(rng, n=6, c=3, s=40, labels=None):
    labels = labels if labels is not None else [i % 2 for i in range(n)]
    return LabeledDataset(rng.standard_normal((n, c, s)), labels, FS, ("a", "b"), "spoken")


def test_class_covariance_single_trial():
    rng = np.random.default_rng(5)
    ds = _ds(rng, n=3, labels=[0, 1, 1])
    got = class_covariance(ds, 0, gamma=0.0).matrix
    want = trial_covariance(ds.epochs[0]).matrix
    assert np.allclose(got, want, atol=1e-15)


def test_class_covariance_full_shrinkage():
    ds = _ds(np.random.default_rng(6))
    got = class_covariance(ds, 1, gamma=1.0).matrix
    assert np.allclose(got, np.eye(3) / 3, atol=1e-15, rtol=0)


def test_class_covariance_mean_of_two():
    ds = _ds(np.random.default_rng(7), n=3, labels=[0, 1, 0])
    a = trial_covariance(ds.epochs[0]).matrix
    b = trial_covariance(ds.epochs[2]).matrix
    assert np.allclose(class_covariance(ds, 0, gamma=0.0).matrix, (a + b) / 2, atol=1e-15)


def test_class_covariance_complement():
    labels = [0, 1, 2, 0, 1, 2]
    rng = np.random.default_rng(8)
    ds = LabeledDataset(rng.standard_normal((6, 3, 40)), labels, FS, ("a", "b", "c"), "x")
    rest = [trial_covariance(e).matrix for e, l in zip(ds.epochs, labels) if l != 0]
    got = class_covariance(ds, 0, complement=True, gamma=0.0).matrix
    assert np.allclose(got, np.mean(rest, axis=0), atol=1e-15)


def test_class_covariance_bad_class():
    with pytest.raises(InputError):
        class_covariance(_ds(np.random.default_rng(9)), 5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_shrinkage_preserves_trace(gamma, seed):
    m = random_spd(np.random.default_rng(seed), 5)
    assert np.trace(shrink(m, gamma)) == pytest.approx(np.trace(m), rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_class_covariance_eigen_invariant(gamma, seed):
    rng = np.random.default_rng(seed)
    # fewer samples than channels: rank-deficient unless shrunk
    ds = LabeledDataset(rng.standard_normal((4, 8, 9)), [0, 1, 0, 1], FS, ("a", "b"), "x")
    m = class_covariance(ds, 0, gamma=gamma).matrix
    assert np.allclose(m, m.T, rtol=0, atol=1e-12 * np.abs(m).max())
    vals = np.linalg.eigvalsh(m)
    assert vals.min() >= -1e-10 * vals.max()
