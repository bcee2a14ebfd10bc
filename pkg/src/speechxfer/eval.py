"""Within-paradigm cross-validation and cross-paradigm transfer evaluation."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .classifier import FeatureScaler, LinearClassifier, fit_scaler, predict, train_ovr_svm
from .core import ConfigError, InputError, LabeledDataset, RunConfig, derive_rng
from .csp import SpatialFilterBank, features_from_array, fit_bank_from_covariances
from .preprocess import common_average_reference, filtfilt_array, trial_covariances

MODES = ("cv", "transfer_full", "transfer_few")


@dataclass(frozen=True, eq=False)
class DecodingModel:
    config: RunConfig
    bank: SpatialFilterBank
    scaler: FeatureScaler
    classifier: LinearClassifier
    source_paradigm: str
    trials_per_class: tuple
    n_channels: int
    fs: float

    def __post_init__(self):
        d = self.bank.n_features
        if self.scaler.n_features != d or self.classifier.n_features != d:
            raise InputError(
                f"model components disagree: bank {d}, scaler {self.scaler.n_features}, "
                f"classifier {self.classifier.n_features} features"
            )

    @property
    def n_classes(self) -> int:
        return self.bank.n_classes

    def __eq__(self, other):
        if not isinstance(other, DecodingModel):
            return NotImplemented
        return (
            self.config == other.config
            and self.bank == other.bank
            and self.scaler == other.scaler
            and self.classifier == other.classifier
            and self.source_paradigm == other.source_paradigm
            and self.trials_per_class == other.trials_per_class
        )


@dataclass(frozen=True)
class EvalReport:
    """Accuracies in percent; ``confusion[i, j]`` counts true i predicted j."""

    mode: str
    accuracies: tuple
    mean: float
    std: float
    confusion: np.ndarray
    seed: int
    source_paradigm: str
    target_paradigm: str

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def pooled_accuracy(self) -> float:
        return 100.0 * float(np.trace(self.confusion)) / self.total


def _mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    mean = float(a.mean())
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return mean, std


def preprocess_array(data: np.ndarray, config: RunConfig, fs: float) -> np.ndarray:
    config.check_band(fs)
    x = common_average_reference(data) if config.car else data
    return filtfilt_array(x, config.band, fs)


def _fit_filtered(x: np.ndarray, covs: np.ndarray, labels: np.ndarray, n_classes: int, config: RunConfig, stream: str):
    bank = fit_bank_from_covariances(covs, labels, n_classes, config.m_pairs, config.gamma)
    feats = features_from_array(bank, x)
    scaler = fit_scaler(feats)
    clf = train_ovr_svm(
        scaler.transform(feats), labels, config.svm_c, config.svm_tol,
        seed=config.seed, stream=stream,
    )
    return bank, scaler, clf


def fit_full(dataset: LabeledDataset, config: RunConfig, stream: str = "full/") -> DecodingModel:
    """Fit band-pass -> OVR CSP -> scaler -> OVR SVM on every trial of ``dataset``."""
    x = preprocess_array(dataset.data, config, dataset.fs)
    bank, scaler, clf = _fit_filtered(
        x, trial_covariances(x), dataset.labels, dataset.n_classes, config, stream
    )
    return DecodingModel(
        config=config, bank=bank, scaler=scaler, classifier=clf,
        source_paradigm=dataset.paradigm,
        trials_per_class=tuple(int(n) for n in dataset.class_counts()),
        n_channels=dataset.n_channels, fs=dataset.fs,
    )


def stratified_folds(labels: np.ndarray, n_folds: int, rng: np.random.Generator) -> list:
    """Shuffle within each class, then deal trials round-robin into folds.

    Dealing continues across classes where the previous class stopped, so fold
    sizes differ by at most one and each fold's per-class count is within one
    of perfect stratification.  Returns sorted index arrays.
    """
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    if np.any(counts < n_folds):
        raise ConfigError(
            f"every class needs >= {n_folds} trials for {n_folds}-fold CV, "
            f"got per-class counts {counts.tolist()}"
        )
    buckets = [[] for _ in range(n_folds)]
    pos = 0
    for cls in range(len(counts)):
        members = rng.permutation(np.flatnonzero(labels == cls))
        for i in members:
            buckets[pos % n_folds].append(int(i))
            pos += 1
    return [np.array(sorted(b), dtype=np.int64) for b in buckets]


def _confusion(true, pred, k):
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def kfold_cv(dataset: LabeledDataset, config: RunConfig, n_jobs: int = 1, return_models: bool = False):
    """Stratified ``config.folds``-fold cross-validation of the full pipeline.

    The band-pass and per-trial covariances are per-trial operations and are
    computed once up front; everything with fitted parameters (CSP, scaler,
    SVM) is refit on the training folds only.  Fold ``i`` draws from stream
    ``fold-{i}/...``.

    With ``return_models`` the per-fold models and test-index arrays are
    returned alongside the report.
    """
    folds = stratified_folds(
        dataset.labels, config.folds, derive_rng(config.seed, "cv-partition")
    )
    x = preprocess_array(dataset.data, config, dataset.fs)
    covs = trial_covariances(x)
    k = dataset.n_classes
    labels = dataset.labels

    def run_fold(i):
        test = folds[i]
        train = np.setdiff1d(np.arange(dataset.n_trials), test)
        bank, scaler, clf = _fit_filtered(
            x[train], covs[train], labels[train], k, config, f"fold-{i}/"
        )
        pred = predict(clf, scaler, features_from_array(bank, x[test]))
        model = DecodingModel(
            config=config, bank=bank, scaler=scaler, classifier=clf,
            source_paradigm=dataset.paradigm,
            trials_per_class=tuple(int(n) for n in np.bincount(labels[train], minlength=k)),
            n_channels=dataset.n_channels, fs=dataset.fs,
        )
        return model, _confusion(labels[test], pred, k)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run_fold, range(config.folds)))
    else:
        results = [run_fold(i) for i in range(config.folds)]
    cms = [cm for _, cm in results]

    accs = tuple(100.0 * float(np.trace(cm)) / float(cm.sum()) for cm in cms)
    mean, std = _mean_std(accs)
    report = EvalReport(
        mode="cv", accuracies=accs, mean=mean, std=std,
        confusion=np.sum(cms, axis=0), seed=int(config.seed),
        source_paradigm=dataset.paradigm, target_paradigm=dataset.paradigm,
    )
    if return_models:
        return report, [m for m, _ in results], folds
    return report


def subsample_few(dataset: LabeledDataset, n_per_class: int, rng: np.random.Generator) -> LabeledDataset:
    """Draw exactly ``n_per_class`` trials of every class without replacement.

    Selected trials keep their original relative order.
    """
    counts = dataset.class_counts()
    if n_per_class < 1 or np.any(counts < n_per_class):
        raise ConfigError(
            f"cannot draw {n_per_class} trials per class from per-class counts {counts.tolist()}"
        )
    chosen = []
    for cls in range(dataset.n_classes):
        members = np.flatnonzero(dataset.labels == cls)
        chosen.append(rng.choice(members, size=n_per_class, replace=False))
    return dataset.subset(np.sort(np.concatenate(chosen)))


def fit_few(dataset: LabeledDataset, config: RunConfig) -> DecodingModel:
    few = subsample_few(
        dataset, config.few_trials_per_class, derive_rng(config.seed, "few-trials")
    )
    return fit_full(few, config, stream="few/")


def evaluate_transfer(model: DecodingModel, target: LabeledDataset, mode: Optional[str] = None) -> EvalReport:
    """Apply the frozen ``model`` to every trial of ``target``; nothing is refit."""
    if target.n_channels != model.n_channels or target.n_classes != model.n_classes:
        raise ConfigError(
            f"target shape (channels={target.n_channels}, K={target.n_classes}) does not match "
            f"model (channels={model.n_channels}, K={model.n_classes})"
        )
    if mode is None:
        mode = "transfer_full"
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    x = preprocess_array(target.data, model.config, target.fs)
    pred = predict(model.classifier, model.scaler, features_from_array(model.bank, x))
    cm = _confusion(target.labels, pred, target.n_classes)
    acc = 100.0 * float(np.trace(cm)) / float(cm.sum())
    return EvalReport(
        mode=mode, accuracies=(acc,), mean=acc, std=0.0, confusion=cm,
        seed=int(model.config.seed), source_paradigm=model.source_paradigm,
        target_paradigm=target.paradigm,
    )
