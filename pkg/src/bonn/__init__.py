"""Circuit-based orthogonal networks for voxel anomaly detection.

The package stacks five layers of machinery: a unary-subspace circuit
simulator (`subspace`), reverse-mode neural layers built on it (`layers`,
`models`), point-estimate and Bayesian trainers (`training`), the anomaly
scoring pipeline with its metrics and data synthesis (`pipeline`, `metrics`,
`datagen`), and artifact plumbing plus hardware-emulation experiments
(`checkpoint`, `experiments`, `config`, `cli`).
"""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, resolve
from .datagen import (
    BlockDataset,
    DatasetFormatError,
    Defect,
    VoxelScan,
    assign_splits,
    decompose,
    generate_dataset,
    generate_scan,
    load_dataset,
    save_dataset,
)
from .experiments import FidelityConfig, HwFractionConfig, run_fidelity, run_hw_fraction
from .layers import (
    Conv3D,
    Dense,
    Dropout,
    Flatten,
    OrthoConv3D,
    OrthoLinear,
    ReLU,
    Reshape,
    Sequential,
    Tanh,
    UpsampleNearest,
)
from .metrics import CalibrationReport, ece, evaluation_summary, mse, precision_recall_f1, sda_luda
from .models import VARIANTS, AutoencoderSpec, build_autoencoder
from .pipeline import (
    AnomalyDecision,
    calibrate_threshold,
    classify,
    decide_blocks,
    score,
    split_leakage,
)
from .subspace import (
    AllShotsDiscardedError,
    NoiseModel,
    PostSelection,
    ShotCounts,
    UnaryState,
    apply_rbs,
    basis_state,
    build_layout,
    chain,
    fidelity_estimate,
    layer_matrix,
    loader_angles,
    postselect_unary,
    sample_shots,
    simulate,
    unary_state,
)
from .training import (
    MODES,
    TrainConfig,
    TrainedModel,
    TrainingDivergedError,
    VariationalParams,
    elbo_loss,
    kl_term,
    predictive,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AllShotsDiscardedError",
    "AnomalyDecision",
    "AutoencoderSpec",
    "BlockDataset",
    "CalibrationReport",
    "CheckpointError",
    "ConfigError",
    "Conv3D",
    "DatasetFormatError",
    "Defect",
    "Dense",
    "Dropout",
    "FidelityConfig",
    "Flatten",
    "HwFractionConfig",
    "MODES",
    "NoiseModel",
    "OrthoConv3D",
    "OrthoLinear",
    "PostSelection",
    "ReLU",
    "Reshape",
    "Sequential",
    "ShotCounts",
    "Tanh",
    "TrainConfig",
    "TrainedModel",
    "TrainingDivergedError",
    "UnaryState",
    "UpsampleNearest",
    "VARIANTS",
    "VariationalParams",
    "VoxelScan",
    "apply_rbs",
    "assign_splits",
    "basis_state",
    "build_layout",
    "calibrate_threshold",
    "chain",
    "classify",
    "decide_blocks",
    "decompose",
    "ece",
    "elbo_loss",
    "evaluation_summary",
    "fidelity_estimate",
    "generate_dataset",
    "generate_scan",
    "kl_term",
    "layer_matrix",
    "load_checkpoint",
    "load_dataset",
    "loader_angles",
    "mse",
    "postselect_unary",
    "precision_recall_f1",
    "predictive",
    "resolve",
    "run_fidelity",
    "run_hw_fraction",
    "sample_shots",
    "save_checkpoint",
    "save_dataset",
    "score",
    "simulate",
    "split_leakage",
    "train",
    "unary_state",
]
