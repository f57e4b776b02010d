"""Reaction-diffusion graph contrastive learning for collaborative filtering."""

from .graph import (InteractionSet, SparseOperator, build_interactions, build_laplacian,
                    build_normalized_adjacency, spmm)
from .losses import CLConfig
from .model import RDGConfig, closed_form_filter, euler_integrate
from .trainer import TrainConfig, fit

__all__ = [
    "InteractionSet", "SparseOperator", "build_interactions", "build_laplacian", "build_normalized_adjacency",
    "spmm", "CLConfig", "RDGConfig", "closed_form_filter", "euler_integrate", "TrainConfig", "fit",
]
__version__ = "0.1.0"
