"""Multimodal MRI+fMRI spatio-temporal classification engine.

From-scratch 3D convolutional and recurrent kernels with explicit
gradients, the multimodal fusion architectures built on them, a
domain-specific augmentation pipeline, Adam training, NIfTI-1 ingestion,
and multi-class evaluation with ROC/AUC reporting.
"""

from .augment import AugmentationPolicy, expand_dataset
from .data import Sample, generate_synthetic_dataset, load_samples, read_nifti, write_nifti
from .metrics import EvalReport, evaluate
from .models import ModelConfig, build_model, load_checkpoint, save_checkpoint, shape_audit
from .training import LearningCurve, TrainConfig, stratified_split, train

__version__ = "0.1.0"

__all__ = [
    "AugmentationPolicy", "EvalReport", "LearningCurve", "ModelConfig",
    "Sample", "TrainConfig", "build_model", "evaluate", "expand_dataset",
    "generate_synthetic_dataset", "load_checkpoint", "load_samples",
    "read_nifti", "save_checkpoint", "shape_audit", "stratified_split",
    "train", "write_nifti",
]
