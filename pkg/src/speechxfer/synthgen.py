"""Synthetic multichannel epochs from a rank-one-per-class forward model.

Class ``k`` adds a band-limited source along the unit spatial pattern

    p_k = normalize(rho * base_k + (1 - rho) * specific_k)

on top of spatially white Gaussian noise.  ``base_k`` is shared by every
dataset generated with the same seed, whatever ``rho``; ``specific_k`` belongs
to the paradigm at that ``rho``.  Models fit at one relatedness therefore
transfer to another in proportion to how much of ``base_k`` both keep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, LabeledDataset, derive_rng
from .preprocess import filtfilt_array

NOISE_STD = 1.0

# illustrative relatedness presets for the CLI
PRESETS = {"spoken": 1.0, "imagined": 0.8, "visual": 0.2}


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 5
    n_channels: int = 16
    fs: float = 250.0
    duration: float = 2.0
    trials_per_class: int = 50
    rho: float = 1.0
    snr: float = 5.0
    band: tuple = (8.0, 30.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))
        if self.n_classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.n_classes}")
        if self.n_channels < 4:
            raise ConfigError(f"channels must be >= 4, got {self.n_channels}")
        if not (math.isfinite(self.fs) and self.fs > 0):
            raise ConfigError(f"fs must be positive, got {self.fs}")
        if self.trials_per_class < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials_per_class}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if not (math.isfinite(self.snr) and self.snr > 0):
            raise ConfigError(f"snr must be > 0, got {self.snr}")
        if self.n_samples < 8:
            raise ConfigError(
                f"duration {self.duration} s at {self.fs} Hz gives fewer than 8 samples"
            )
        lo, hi = self.band
        if not 0 < lo < hi < self.fs / 2:
            raise ConfigError(f"band {self.band} must satisfy 0 < low < high < fs/2")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.fs))


def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def base_patterns(config: SynthConfig) -> np.ndarray:
    rng = derive_rng(config.seed, "base-patterns")
    return _unit_rows(rng.standard_normal((config.n_classes, config.n_channels)))


def specific_patterns(config: SynthConfig) -> np.ndarray:
    rng = derive_rng(config.seed, f"paradigm-{float(config.rho)!r}")
    return _unit_rows(rng.standard_normal((config.n_classes, config.n_channels)))


def class_patterns(config: SynthConfig) -> np.ndarray:
    """Unit spatial pattern of each class, shape (K, C)."""
    rho = float(config.rho)
    if rho == 1.0:
        return base_patterns(config)
    return _unit_rows(rho * base_patterns(config) + (1.0 - rho) * specific_patterns(config))


def generate_dataset(config: SynthConfig) -> LabeledDataset:
    """Generate ``trials_per_class`` trials per class, classes interleaved.

    Trial ``i`` of class ``k`` is drawn from stream ``trial-{k}-{i}``.  The
    source time course is white noise band-passed to ``config.band`` and
    rescaled so its variance is exactly ``snr * NOISE_STD**2``.  Samples are
    rounded to float32 so the dataset survives an EPO1 round-trip unchanged.
    """
    patterns = class_patterns(config)
    k_cls, c, s = config.n_classes, config.n_channels, config.n_samples
    data = np.empty((config.trials_per_class * k_cls, c, s))
    labels = np.empty(config.trials_per_class * k_cls, dtype=np.int64)
    target_std = math.sqrt(config.snr) * NOISE_STD
    t = 0
    for i in range(config.trials_per_class):
        for k in range(k_cls):
            rng = derive_rng(config.seed, f"trial-{k}-{i}")
            source = filtfilt_array(rng.standard_normal(s), config.band, config.fs)
            source = source - source.mean()
            source *= target_std / source.std()
            noise = NOISE_STD * rng.standard_normal((c, s))
            data[t] = np.outer(patterns[k], source) + noise
            labels[t] = k
            t += 1
    return LabeledDataset(
        data=data.astype(np.float32).astype(np.float64),
        labels=labels,
        fs=config.fs,
        class_names=tuple(f"class-{k}" for k in range(k_cls)),
        paradigm="synthetic",
        relatedness=float(config.rho),
    )
