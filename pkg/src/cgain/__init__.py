"""Label-aware adversarial imputation for tabular classification, with baselines and a sweep harness."""

__version__ = "0.1.0"

from .classifier_gain import CgHyper, TrainedTriple, load_triple, predict, save_triple, train_classifier_gain
from .data import MaskedDataset, SplitPlan, SyntheticSpec, apply_mcar, generate_synthetic, load_csv
from .errors import CgainError, ConfigError, DataError, NumericError, UsageError
from .gain import GainHyper, impute_full, train_gain
from .metrics import auc_roc, macro_f1, rgrr, rir

__all__ = [
    "__version__",
    "CgHyper",
    "CgainError",
    "ConfigError",
    "DataError",
    "GainHyper",
    "MaskedDataset",
    "NumericError",
    "SplitPlan",
    "SyntheticSpec",
    "TrainedTriple",
    "UsageError",
    "apply_mcar",
    "auc_roc",
    "generate_synthetic",
    "impute_full",
    "load_csv",
    "load_triple",
    "macro_f1",
    "predict",
    "rgrr",
    "rir",
    "save_triple",
    "train_classifier_gain",
    "train_gain",
]
