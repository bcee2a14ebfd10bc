"""CSP + linear SVM decoding of EEG epochs, within and across paradigms."""

__version__ = "0.1.0"

from .core import (
    ConfigError,
    DegenerateInputError,
    Epoch,
    FormatError,
    InputError,
    LabeledDataset,
    RankError,
    RunConfig,
    SpeechXferError,
    derive_rng,
    read_epo1,
    write_epo1,
)
from .csp import SpatialFilterBank, extract_features, fit_binary_csp, fit_ovr_bank
from .classifier import FeatureScaler, LinearClassifier, fit_scaler, predict, train_ovr_svm
from .eval import (
    DecodingModel,
    EvalReport,
    evaluate_transfer,
    fit_few,
    fit_full,
    kfold_cv,
    subsample_few,
)
from .preprocess import Covariance, bandpass, class_covariance, trial_covariance
from .stats import StatsReport, bootstrap_paired, chi2_sf, compare_groups, kruskal_wallis, summarize
from .synthgen import SynthConfig, generate_dataset
