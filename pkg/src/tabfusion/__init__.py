"""tabfusion: a desk-scale multi-modal tabular transformer.

Heterogeneous feature encoding, dual attention with projection-based
inter-sample attention, spectral normalization, self-supervised
pre-training, and calibrated GP output heads, all on a small numpy
autodiff core.
"""

from .config import RunConfig
from .data import FeatureSchema, FeatureSpec, Snapshot, load_dataset, make_folds
from .metrics import auprc, auroc, ece
from .model import Model
from .tensor import Tensor

__all__ = [
    "RunConfig",
    "FeatureSchema",
    "FeatureSpec",
    "Snapshot",
    "load_dataset",
    "make_folds",
    "Model",
    "Tensor",
    "auroc",
    "auprc",
    "ece",
]

__version__ = "0.1.0"
