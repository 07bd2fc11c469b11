"""Lifelong metric learning for visual loop closure detection.

Trains compact global image descriptors from a strictly sequential stream of
environments with constant memory: a similarity-aware FIFO buffer supplies
triplets, importance-weighted parameter regularization and relational
distillation hold on to previously learned similarity structure, and the
evaluation harness scores recall at 100% precision across environments.
"""

__version__ = "0.1.0"

from .evaluation import (LifelongSummary, build_performance_matrix,
                         recall_at_full_precision, retrieve, summarize)
from .geometry import (CameraPose, FrameDistance, Intrinsics, Label,
                       OverlapResult, PlaceRing, PoseThreshold, SiouRule,
                       classify_pair, covisible_fraction, overlap, siou)
from .losses import (ImportanceVector, LifelongState, combined_loss, kd_loss,
                     mas_importance_step, quadratic_penalty, rkd_loss,
                     rmas_importance_step, triplet_loss)
from .memory import MemoryBuffer, Triplet
from .model import ArchConfig, DescriptorModel, cosine_sim
from .trainer import StepReport, TrainConfig, Trainer, load_config

__all__ = [
    "ArchConfig", "CameraPose", "DescriptorModel", "FrameDistance",
    "ImportanceVector", "Intrinsics", "Label", "LifelongState",
    "LifelongSummary", "MemoryBuffer", "OverlapResult", "PlaceRing",
    "PoseThreshold", "SiouRule", "StepReport", "TrainConfig", "Trainer",
    "Triplet", "build_performance_matrix", "classify_pair", "combined_loss",
    "cosine_sim", "covisible_fraction", "kd_loss", "load_config",
    "mas_importance_step", "overlap", "quadratic_penalty",
    "recall_at_full_precision", "retrieve", "rkd_loss",
    "rmas_importance_step", "siou", "summarize", "triplet_loss",
]
