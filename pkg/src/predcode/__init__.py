"""Predictive coding networks trained by negative-free-energy ascent."""

from .activations import Activation
from .bp import MLPReference, bp_backward, bp_forward, compare_pc_bp, train_bp
from .data import Dataset, load_idx, synth_blobs, write_idx
from .errors import (
    ConfigurationError,
    ConvergenceWarning,
    NumericError,
    PrecisionError,
    PredCodeError,
    ShapeError,
)
from .inference import ClampSpec, InferenceConfig, InferenceResult, inference_step, run_inference
from .kalman import BeliefState, LinearGaussianSystem, kf_predict, kf_update, pc_filter_step, run_filter
from .learning import LearningConfig, em_step, em_update, train
from .model import (
    NetworkState,
    PCNetwork,
    count_ops,
    init_network,
    load_checkpoint,
    make_state,
    nfe,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "BeliefState",
    "ClampSpec",
    "ConfigurationError",
    "ConvergenceWarning",
    "Dataset",
    "InferenceConfig",
    "InferenceResult",
    "LearningConfig",
    "LinearGaussianSystem",
    "MLPReference",
    "NetworkState",
    "NumericError",
    "PCNetwork",
    "PrecisionError",
    "PredCodeError",
    "ShapeError",
    "bp_backward",
    "bp_forward",
    "compare_pc_bp",
    "count_ops",
    "em_step",
    "em_update",
    "inference_step",
    "init_network",
    "kf_predict",
    "kf_update",
    "load_checkpoint",
    "load_idx",
    "make_state",
    "nfe",
    "pc_filter_step",
    "run_filter",
    "run_inference",
    "save_checkpoint",
    "synth_blobs",
    "train",
    "train_bp",
    "write_idx",
]
