"""Domain types, seeded RNG streams and the EPO1 epoch container.

Everything random in the package is drawn from a generator returned by
:func:`derive_rng`, so a run is fully determined by its seed and the labels of
the streams it opens.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

MAGIC = b"EPO1"
VERSION = 1

# magic, version, n_trials, n_channels, n_samples, fs, K
_HEADER = struct.Struct("<4sIIIIdH")
_U16 = struct.Struct("<H")
_F64 = struct.Struct("<d")
_NAN_BITS = struct.pack("<Q", 0x7FF8000000000000)


class SpeechXferError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(SpeechXferError, ValueError):
    """Invalid configuration or incompatible inputs."""

    exit_code = 2


class InputError(SpeechXferError, ValueError):
    """Malformed input values (non-finite features, ragged columns, ...)."""

    exit_code = 2


class FormatError(SpeechXferError, ValueError):
    """Corrupt or truncated EPO1 file."""

    exit_code = 3


class DegenerateInputError(SpeechXferError, ArithmeticError):
    """Input that makes a numerical step undefined (zero variance, ...)."""

    exit_code = 4


class RankError(DegenerateInputError):
    """More CSP filters requested than the composite covariance supports."""

    def __init__(self, message: str, achievable: int):
        super().__init__(message)
        self.achievable = achievable


def derive_rng(seed: int, stream_label: str) -> np.random.Generator:
    """Return the generator for stream ``stream_label`` of run ``seed``.

    The seed (as 8 little-endian bytes) and the UTF-8 label are hashed with
    SHA-256; the digest seeds a PCG64 bit generator through ``SeedSequence``.
    The stream therefore depends only on ``(seed, stream_label)``, never on the
    order in which streams are opened.
    """
    if not 0 <= int(seed) < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed}")
    digest = hashlib.sha256(
        int(seed).to_bytes(8, "little") + b"\x00" + stream_label.encode("utf-8")
    ).digest()
    entropy = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Epoch:
    """One trial: ``data`` is channels x samples in microvolts."""

    data: np.ndarray
    fs: float

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 2:
            raise InputError(f"epoch data must be 2-D, got shape {data.shape}")
        if data.shape[0] < 2 or data.shape[1] < 8:
            raise InputError(
                f"epoch needs >= 2 channels and >= 8 samples, got {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise InputError("epoch contains non-finite values")
        if not (math.isfinite(self.fs) and self.fs > 0):
            raise InputError(f"sampling rate must be positive, got {self.fs}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "fs", float(self.fs))

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Epoch):
            return NotImplemented
        return self.fs == other.fs and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """A paradigm-tagged stack of equally shaped trials with class labels.

    ``data`` has shape (n_trials, n_channels, n_samples). Use
    :meth:`from_epochs` to build one from a list of :class:`Epoch`.
    """

    data: np.ndarray
    labels: np.ndarray
    fs: float
    class_names: tuple
    paradigm: str
    relatedness: Optional[float] = None

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 3:
            raise InputError(f"dataset data must be 3-D, got shape {data.shape}")
        n, c, s = data.shape
        if c < 2 or s < 8:
            raise InputError(f"trials need >= 2 channels and >= 8 samples, got {(c, s)}")
        if not np.all(np.isfinite(data)):
            raise InputError("dataset contains non-finite samples")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or len(labels) != n:
            raise InputError(f"expected {n} labels, got shape {labels.shape}")
        if n and not np.all(labels == np.round(labels)):
            raise InputError("labels must be integers")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        names = tuple(str(x) for x in self.class_names)
        k = len(names)
        if k < 2:
            raise InputError(f"need at least 2 classes, got {k}")
        if n and (labels.min() < 0 or labels.max() >= k):
            raise InputError(f"labels must lie in [0, {k - 1}]")
        missing = sorted(set(range(k)) - set(labels.tolist()))
        if missing:
            raise InputError(f"classes without trials: {missing}")
        if not (math.isfinite(self.fs) and self.fs > 0):
            raise InputError(f"sampling rate must be positive, got {self.fs}")
        rel = self.relatedness
        if rel is not None:
            rel = float(rel)
            if math.isnan(rel):
                rel = None
            elif not 0.0 <= rel <= 1.0:
                raise InputError(f"relatedness must lie in [0, 1], got {rel}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "class_names", names)
        object.__setattr__(self, "paradigm", str(self.paradigm))
        object.__setattr__(self, "relatedness", rel)

    @classmethod
    def from_epochs(
        cls,
        epochs: Sequence[Epoch],
        labels: Iterable[int],
        class_names: Sequence[str],
        paradigm: str,
        relatedness: Optional[float] = None,
    ) -> "LabeledDataset":
        if not epochs:
            raise InputError("dataset needs at least one epoch")
        shapes = {(e.data.shape, e.fs) for e in epochs}
        if len(shapes) != 1:
            raise InputError(f"epochs differ in shape or sampling rate: {sorted(shapes)}")
        return cls(
            data=np.stack([e.data for e in epochs]),
            labels=np.asarray(list(labels)),
            fs=epochs[0].fs,
            class_names=tuple(class_names),
            paradigm=paradigm,
            relatedness=relatedness,
        )

    @property
    def epochs(self) -> tuple:
        return tuple(Epoch(x, self.fs) for x in self.data)

    @property
    def n_trials(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def n_samples(self) -> int:
        return self.data.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index) -> "LabeledDataset":
        """Trials at ``index`` (in the given order) with all metadata kept."""
        index = np.asarray(index, dtype=np.int64)
        return LabeledDataset(
            data=self.data[index],
            labels=self.labels[index],
            fs=self.fs,
            class_names=self.class_names,
            paradigm=self.paradigm,
            relatedness=self.relatedness,
        )

    def with_data(self, data: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(
            data, self.labels, self.fs, self.class_names, self.paradigm, self.relatedness
        )

    def with_labels(self, labels) -> "LabeledDataset":
        return LabeledDataset(
            self.data, labels, self.fs, self.class_names, self.paradigm, self.relatedness
        )

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            np.array_equal(self.data, other.data)
            and np.array_equal(self.labels, other.labels)
            and self.fs == other.fs
            and self.class_names == other.class_names
            and self.paradigm == other.paradigm
            and self.relatedness == other.relatedness
        )


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters shared by every evaluation mode."""

    seed: int = 0
    band: tuple = (0.5, 40.0)
    m_pairs: int = 3
    gamma: float = 1e-6
    svm_c: float = 1.0
    svm_tol: float = 1e-6
    folds: int = 10
    few_trials_per_class: int = 10
    bootstrap_b: int = 10000
    car: bool = False

    def __post_init__(self):
        object.__setattr__(self, "band", (float(self.band[0]), float(self.band[1])))
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        lo, hi = self.band
        if not 0 < lo < hi:
            raise ConfigError(f"band must satisfy 0 < low < high, got {self.band}")
        if self.m_pairs < 1:
            raise ConfigError(f"m_pairs must be >= 1, got {self.m_pairs}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.svm_c > 0:
            raise ConfigError(f"svm_c must be > 0, got {self.svm_c}")
        if not self.svm_tol > 0:
            raise ConfigError(f"svm_tol must be > 0, got {self.svm_tol}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.few_trials_per_class < 1:
            raise ConfigError(
                f"few_trials_per_class must be >= 1, got {self.few_trials_per_class}"
            )
        if self.bootstrap_b < 100:
            raise ConfigError(f"bootstrap_b must be >= 100, got {self.bootstrap_b}")

    def check_band(self, fs: float) -> None:
        if not self.band[1] < fs / 2:
            raise ConfigError(
                f"band {self.band} exceeds the Nyquist frequency {fs / 2} Hz"
            )

    def as_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "band": list(self.band),
            "m_pairs": int(self.m_pairs),
            "gamma": float(self.gamma),
            "svm_c": float(self.svm_c),
            "svm_tol": float(self.svm_tol),
            "folds": int(self.folds),
            "few_trials_per_class": int(self.few_trials_per_class),
            "bootstrap_b": int(self.bootstrap_b),
            "car": bool(self.car),
        }


# --------------------------------------------------------------------------
# EPO1 container
# --------------------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InputError(f"string too long for EPO1 ({len(raw)} bytes)")
    return _U16.pack(len(raw)) + raw


def epo1_bytes(dataset: LabeledDataset) -> bytes:
    """Serialize ``dataset`` to the EPO1 byte layout."""
    n, c, s = dataset.data.shape
    parts = [_HEADER.pack(MAGIC, VERSION, n, c, s, dataset.fs, dataset.n_classes)]
    parts.extend(_pack_str(name) for name in dataset.class_names)
    parts.append(_pack_str(dataset.paradigm))
    if dataset.relatedness is None:
        parts.append(_NAN_BITS)
    else:
        parts.append(_F64.pack(dataset.relatedness))
    parts.append(dataset.labels.astype("<u2").tobytes())
    samples = dataset.data.astype("<f4")
    if not np.all(np.isfinite(samples)):
        raise InputError("samples overflow 32-bit float storage")
    parts.append(samples.tobytes(order="C"))
    return b"".join(parts)


def write_epo1(dataset: LabeledDataset, path) -> None:
    Path(path).write_bytes(epo1_bytes(dataset))


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated payload at byte offset {self.pos}: {what} needs {n} bytes, "
                f"{len(self.buf) - self.pos} available"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def string(self, what: str) -> str:
        start = self.pos
        (length,) = _U16.unpack(self.take(2, what + " length"))
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"invalid UTF-8 in {what} at byte offset {start}") from exc


def parse_epo1(buf: bytes) -> LabeledDataset:
    """Inverse of :func:`epo1_bytes`; errors name the offending byte offset."""
    cur = _Cursor(buf)
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic at byte offset 0: {buf[:4]!r}")
    magic, version, n, c, s, fs, k = _HEADER.unpack(cur.take(_HEADER.size, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at byte offset 4")
    if c < 2 or s < 8:
        raise FormatError(f"invalid trial shape ({c}, {s}) at byte offset 12")
    if not (math.isfinite(fs) and fs > 0):
        raise FormatError(f"invalid sampling rate {fs} at byte offset 20")
    if k < 2:
        raise FormatError(f"class count {k} < 2 at byte offset 28")
    names = [cur.string(f"class name {i}") for i in range(k)]
    paradigm = cur.string("paradigm tag")
    rel_off = cur.pos
    (rel,) = _F64.unpack(cur.take(8, "relatedness"))
    if not math.isnan(rel) and not 0.0 <= rel <= 1.0:
        raise FormatError(f"relatedness {rel} outside [0, 1] at byte offset {rel_off}")

    label_off = cur.pos
    labels = np.frombuffer(cur.take(2 * n, "label block"), dtype="<u2").astype(np.int64)
    bad = np.flatnonzero(labels >= k)
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"label {labels[i]} out of range [0, {k - 1}] at byte offset {label_off + 2 * i}"
        )
    missing = sorted(set(range(k)) - set(labels.tolist()))
    if missing:
        raise FormatError(f"classes without trials {missing} in label block at byte offset {label_off}")

    trial_bytes = 4 * c * s
    sample_off = cur.pos
    for i in range(n):
        if sample_off + (i + 1) * trial_bytes > len(buf):
            raise FormatError(
                f"truncated payload at byte offset {sample_off + i * trial_bytes}: "
                f"header declares {n} trials, trial {i} is incomplete"
            )
    flat = np.frombuffer(cur.take(n * trial_bytes, "sample block"), dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FormatError(f"non-finite sample at byte offset {sample_off + 4 * int(bad[0])}")
    if cur.pos != len(buf):
        raise FormatError(f"{len(buf) - cur.pos} trailing bytes at byte offset {cur.pos}")

    return LabeledDataset(
        data=flat.reshape(n, c, s).astype(np.float64),
        labels=labels,
        fs=fs,
        class_names=tuple(names),
        paradigm=paradigm,
        relatedness=None if math.isnan(rel) else rel,
    )


def read_epo1(path) -> LabeledDataset:
    return parse_epo1(Path(path).read_bytes())


def epo1_size(n_trials: int, n_channels: int, n_samples: int, class_names, paradigm: str) -> int:
    """Exact file size implied by the EPO1 layout."""
    names = sum(2 + len(x.encode("utf-8")) for x in class_names)
    return (
        _HEADER.size
        + names
        + 2 + len(paradigm.encode("utf-8"))
        + 8
        + 2 * n_trials
        + 4 * n_trials * n_channels * n_samples
    )
