"""Convolutional classifiers for multivariate data series, explained
through dimension-wise class activation maps.

The pipeline: build a permutation cube from a series (`series`), train
a grid-input network on it (`networks`, `training`), then attribute the
class decision back to individual (dimension, timestamp) cells (`cam`)
and score the attribution against ground truth (`metrics`).  `synth`
provides the two benchmark generators and `cli` the command-line tools.
"""

from .autograd import ContractError, ShapeError, Tensor, default_dtype, set_default_dtype
from .cam import ActivationMap, DcamResult, MTensor, compute_cam, compute_ccam, compute_dcam
from .metrics import (
    ExplanationReport,
    MetricsError,
    PrCurve,
    classification_accuracy,
    dr_acc,
    explanation_report,
    pr_curve,
)
from .networks import (
    ArchitectureSpec,
    Model,
    ModelFormatError,
    build_model,
    default_spec,
    forward_logits,
    load_model,
    predict_label,
    save_model,
)
from .series import (
    InputCube,
    MultivariateSeries,
    Permutation,
    SeriesFormatError,
    build_cube,
    idx,
    load_series_csv,
    sample_permutations,
    save_series_csv,
)
from .synth import LabeledDataset, SynthConfig, SynthError, export_dataset, generate, import_dataset
from .training import TrainConfig, TrainingError, train

__version__ = "0.1.0"

__all__ = [
    "ActivationMap",
    "ArchitectureSpec",
    "ContractError",
    "DcamResult",
    "ExplanationReport",
    "InputCube",
    "LabeledDataset",
    "MTensor",
    "MetricsError",
    "Model",
    "ModelFormatError",
    "MultivariateSeries",
    "Permutation",
    "PrCurve",
    "SeriesFormatError",
    "ShapeError",
    "SynthConfig",
    "SynthError",
    "Tensor",
    "TrainConfig",
    "TrainingError",
    "__version__",
    "build_cube",
    "build_model",
    "classification_accuracy",
    "compute_cam",
    "compute_ccam",
    "compute_dcam",
    "default_dtype",
    "default_spec",
    "dr_acc",
    "explanation_report",
    "export_dataset",
    "forward_logits",
    "generate",
    "idx",
    "import_dataset",
    "load_model",
    "load_series_csv",
    "pr_curve",
    "predict_label",
    "sample_permutations",
    "save_model",
    "save_series_csv",
    "set_default_dtype",
    "train",
]
