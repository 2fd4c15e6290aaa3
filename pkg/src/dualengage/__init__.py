"""DualEngage: two-stream group engagement classification.

Per-student motion tubes (tracked flow crops) encoded by a shared transformer
and attention-pooled across students, fused through a softmax gate with a
scene-level 3D-convolutional embedding of the full clip.
"""

from .config import RunConfig, toy_run_config
from .core import EngagementLabel, LABEL_CODES, seed_everything
from .metrics import FoldReport, compute_metrics
from .model import VARIANTS, build_model
from .npyio import TensorFile, read_tensor, write_tensor
from .synthetic import SyntheticSpec, generate_synthetic
from .training import run_cv, run_fold, stratified_kfold

__version__ = "0.1.0"

__all__ = [
    "EngagementLabel",
    "FoldReport",
    "LABEL_CODES",
    "RunConfig",
    "SyntheticSpec",
    "TensorFile",
    "VARIANTS",
    "build_model",
    "compute_metrics",
    "generate_synthetic",
    "read_tensor",
    "run_cv",
    "run_fold",
    "seed_everything",
    "stratified_kfold",
    "toy_run_config",
    "write_tensor",
]
