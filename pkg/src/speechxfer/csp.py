"""One-vs-rest Common Spatial Patterns."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DegenerateInputError, Epoch, InputError, LabeledDataset, RankError
from .preprocess import Covariance, pooled_covariance, trial_covariances

RANK_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpatialFilterBank:
    """Per-class CSP filters.

    ``filters`` has shape (K, 2m, C): for class ``c`` the first ``m`` rows
    maximize the class-c share of variance, the last ``m`` minimize it.
    ``eigenvalues`` (K, 2m) holds the matching variance shares.
    """

    filters: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        f = np.array(self.filters, dtype=np.float64, copy=True)
        e = np.array(self.eigenvalues, dtype=np.float64, copy=True)
        if f.ndim != 3 or e.shape != f.shape[:2] or f.shape[1] % 2:
            raise InputError(f"inconsistent filter bank shapes {f.shape}, {e.shape}")
        f.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "filters", f)
        object.__setattr__(self, "eigenvalues", e)

    @property
    def n_classes(self) -> int:
        return self.filters.shape[0]

    @property
    def m(self) -> int:
        return self.filters.shape[1] // 2

    @property
    def n_channels(self) -> int:
        return self.filters.shape[2]

    @property
    def n_features(self) -> int:
        return self.filters.shape[0] * self.filters.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SpatialFilterBank):
            return NotImplemented
        return np.array_equal(self.filters, other.filters) and np.array_equal(
            self.eigenvalues, other.eigenvalues
        )


def _sym_eig_descending(a: np.ndarray):
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    # stable sort: equal eigenvalues keep ascending eigh index order
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[:, order]


def _apply_sign_convention(w: np.ndarray) -> np.ndarray:
    # argmax returns the lowest index among ties
    pivot = np.argmax(np.abs(w), axis=1)
    signs = np.where(w[np.arange(w.shape[0]), pivot] < 0, -1.0, 1.0)
    return w * signs[:, None]


def fit_binary_csp(cov_a, cov_b, m: int):
    """Two-class CSP by whitening the composite covariance.

    Parameters
    ----------
    cov_a, cov_b : Covariance or ndarray
        Shrunk class covariances, same size.
    m : int
        Filters kept at each end of the spectrum.

    Returns
    -------
    filters : ndarray, shape (2m, C)
    eigenvalues : ndarray, shape (2m,)
        Share of composite variance carried by class A along each filter;
        descending for the first m rows, then the m smallest in descending
        order.
    """
    a = cov_a.matrix if isinstance(cov_a, Covariance) else np.asarray(cov_a, dtype=float)
    b = cov_b.matrix if isinstance(cov_b, Covariance) else np.asarray(cov_b, dtype=float)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"covariance shapes differ: {a.shape} vs {b.shape}")
    if m < 1:
        raise InputError(f"m must be >= 1, got {m}")

    lam, u = _sym_eig_descending(a + b)
    if lam[0] <= 0:
        raise DegenerateInputError("composite covariance has no positive eigenvalue")
    keep = lam > RANK_RTOL * lam[0]
    rank = int(keep.sum())
    if 2 * m > rank:
        raise RankError(
            f"2m = {2 * m} filters exceed the composite covariance rank {rank}; "
            f"at most m = {rank // 2} is achievable",
            achievable=rank // 2,
        )
    whitening = u[:, keep].T / np.sqrt(lam[keep])[:, None]
    s, v = _sym_eig_descending(whitening @ a @ whitening.T)
    w = v.T @ whitening
    rows = np.r_[0:m, rank - m : rank]
    return _apply_sign_convention(w[rows]), s[rows]


def fit_bank_from_covariances(covs: np.ndarray, labels: np.ndarray, n_classes: int, m: int, gamma: float) -> SpatialFilterBank:
    filters, eigs = [], []
    for c in range(n_classes):
        cov_c = pooled_covariance(covs, labels, c, False, gamma)
        cov_rest = pooled_covariance(covs, labels, c, True, gamma)
        try:
            w, s = fit_binary_csp(cov_c, cov_rest, m)
        except RankError as exc:
            raise RankError(f"class {c}: {exc}", exc.achievable) from exc
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"class {c}: {exc}") from exc
        filters.append(w)
        eigs.append(s)
    return SpatialFilterBank(np.stack(filters), np.stack(eigs))


def fit_ovr_bank(dataset: LabeledDataset, m: int = 3, gamma: float = 1e-6, trace_norm: bool = True) -> SpatialFilterBank:
    """Fit one class-vs-rest CSP sub-bank per class.

    ``trace_norm=False`` pools unnormalized trial covariances; only then is
    the fit exactly equivariant under an arbitrary invertible channel remix.
    """
    covs = trial_covariances(dataset.data, trace_norm)
    return fit_bank_from_covariances(covs, dataset.labels, dataset.n_classes, m, gamma)


def features_from_array(bank: SpatialFilterBank, data: np.ndarray) -> np.ndarray:
    """Normalized log-variance features for a (trials, C, S) stack."""
    data = np.asarray(data, dtype=np.float64)
    if data.shape[-2] != bank.n_channels:
        raise InputError(
            f"trials have {data.shape[-2]} channels, filter bank expects {bank.n_channels}"
        )
    k, f, c = bank.filters.shape
    proj = np.einsum("fc,ncs->nfs", bank.filters.reshape(k * f, c), data)
    var = proj.var(axis=-1).reshape(data.shape[0], k, f)
    total = var.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateInputError("zero total projected variance within a sub-bank")
    with np.errstate(divide="ignore"):
        feats = np.log(var / total)
    if not np.all(np.isfinite(feats)):
        raise DegenerateInputError("a filter has zero projected variance")
    return feats.reshape(data.shape[0], k * f)


def extract_features(bank: SpatialFilterBank, epoch: Epoch) -> np.ndarray:
    return features_from_array(bank, epoch.data[None])[0]
