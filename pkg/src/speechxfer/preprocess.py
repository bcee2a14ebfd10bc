"""Temporal filtering and covariance estimation ahead of CSP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .core import ConfigError, DegenerateInputError, Epoch, InputError, LabeledDataset

FILTER_ORDER = 4


@dataclass(frozen=True, eq=False)
class Covariance:
    matrix: np.ndarray
    trace_norm: bool = True

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InputError(f"covariance must be square, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_channels(self) -> int:
        return self.matrix.shape[0]


def _check_band(band, fs):
    lo, hi = float(band[0]), float(band[1])
    if not 0 < lo < hi < fs / 2:
        raise ConfigError(
            f"band ({lo}, {hi}) Hz must satisfy 0 < low < high < fs/2 = {fs / 2}"
        )
    return lo, hi


def butter_bandpass(band, fs: float) -> np.ndarray:
    """Second-order sections of the 4th-order Butterworth band-pass."""
    lo, hi = _check_band(band, fs)
    return signal.butter(FILTER_ORDER, [lo, hi], btype="bandpass", fs=fs, output="sos")


def filtfilt_array(x: np.ndarray, band, fs: float) -> np.ndarray:
    """Zero-phase band-pass along the last axis of ``x``.

    Forward then time-reversed pass, with even-symmetric reflection padding of
    three times the filter order (the band-pass transfer function has order
    ``2 * FILTER_ORDER``) on both ends.
    """
    sos = butter_bandpass(band, fs)
    n = x.shape[-1]
    padlen = min(3 * 2 * FILTER_ORDER, n - 1)
    return signal.sosfiltfilt(sos, x, axis=-1, padtype="even", padlen=padlen)


def bandpass(epoch: Epoch, band) -> Epoch:
    return Epoch(filtfilt_array(epoch.data, band, epoch.fs), epoch.fs)


def bandpass_dataset(dataset: LabeledDataset, band) -> LabeledDataset:
    return dataset.with_data(filtfilt_array(dataset.data, band, dataset.fs))


def common_average_reference(x: np.ndarray) -> np.ndarray:
    """Subtract the across-channel mean at every sample (channels on axis -2)."""
    return x - x.mean(axis=-2, keepdims=True)


def _scatter(x: np.ndarray, trace_norm: bool) -> np.ndarray:
    x = x - x.mean(axis=-1, keepdims=True)
    scatter = x @ np.swapaxes(x, -1, -2)
    scatter = 0.5 * (scatter + np.swapaxes(scatter, -1, -2))
    tr = np.trace(scatter, axis1=-2, axis2=-1)
    if np.any(tr <= 0):
        raise DegenerateInputError("epoch has zero total variance (trace 0)")
    if trace_norm:
        return scatter / tr[..., None, None]
    return scatter / x.shape[-1]


def trial_covariance(epoch: Epoch, trace_norm: bool = True) -> Covariance:
    """Spatial covariance of one de-meaned trial, scaled to unit trace by default.

    With ``trace_norm=False`` the plain (biased) sample covariance is returned.
    """
    return Covariance(_scatter(epoch.data, trace_norm), trace_norm=trace_norm)


def trial_covariances(data: np.ndarray, trace_norm: bool = True) -> np.ndarray:
    """Vectorized :func:`trial_covariance` over a (trials, C, S) stack."""
    return _scatter(np.asarray(data, dtype=np.float64), trace_norm)


def shrink(matrix: np.ndarray, gamma: float) -> np.ndarray:
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"shrinkage gamma must lie in [0, 1], got {gamma}")
    c = matrix.shape[0]
    target = np.trace(matrix) / c
    out = (1.0 - gamma) * matrix
    out[np.diag_indices(c)] += gamma * target
    return out


def pooled_covariance(covs: np.ndarray, labels: np.ndarray, cls: int, complement: bool, gamma: float) -> np.ndarray:
    """Class (or complement) mean of precomputed trial covariances, shrunk."""
    mask = labels != cls if complement else labels == cls
    if not np.any(mask):
        side = "complement of class" if complement else "class"
        raise InputError(f"no trials selected for {side} {cls}")
    mean = covs[mask].mean(axis=0)
    return shrink(0.5 * (mean + mean.T), gamma)


def class_covariance(
    dataset: LabeledDataset,
    cls: int,
    complement: bool = False,
    gamma: float = 1e-6,
    trace_norm: bool = True,
) -> Covariance:
    """Shrunk mean trial covariance of class ``cls`` (or of all other classes)."""
    if not 0 <= cls < dataset.n_classes:
        raise InputError(f"class {cls} not in [0, {dataset.n_classes - 1}]")
    covs = trial_covariances(dataset.data, trace_norm)
    return Covariance(
        pooled_covariance(covs, dataset.labels, cls, complement, gamma), trace_norm=trace_norm
    )
