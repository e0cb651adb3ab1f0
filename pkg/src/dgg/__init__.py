"""Differentiable graph generation: per-node neighborhood selection and
size, trained end-to-end with a graph convolutional network."""

from .autodiff import (
    ArgumentError,
    AutodiffError,
    DomainError,
    NumericError,
    ShapeError,
    Tape,
    Tensor,
    finite_difference_check,
)
from .data import GraphDataset, SbmSpec, generate_sbm, inject_edge_noise, load_dataset, save_dataset
from .gcn import GcnParams, accuracy, gcn_forward, masked_cross_entropy, normalize_adjacency
from .generator import (
    DggOutput,
    DggParams,
    adjoint_neighbors,
    degree_decode,
    degree_encode,
    dgg_forward,
    edge_probabilities,
    edge_refine,
    gumbel_edge_samples,
    local_edge_embed,
    node_encode,
    smooth_heaviside_gate,
    topk_select,
)
from .sampling import FrozenNoiseError, RngState, SamplingError, freeze_noise
from .training import (
    Adam,
    TrainConfig,
    TrainReport,
    TrainResult,
    TrainingError,
    ablate,
    anneal_weight,
    evaluate_checkpoint,
    fixed_k_bypass,
    intermediate_adjacency_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ArgumentError",
    "AutodiffError",
    "DggOutput",
    "DggParams",
    "DomainError",
    "FrozenNoiseError",
    "GcnParams",
    "GraphDataset",
    "NumericError",
    "RngState",
    "SamplingError",
    "SbmSpec",
    "ShapeError",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "TrainResult",
    "TrainingError",
    "ablate",
    "accuracy",
    "adjoint_neighbors",
    "anneal_weight",
    "degree_decode",
    "degree_encode",
    "dgg_forward",
    "edge_probabilities",
    "edge_refine",
    "evaluate_checkpoint",
    "finite_difference_check",
    "fixed_k_bypass",
    "freeze_noise",
    "gcn_forward",
    "generate_sbm",
    "gumbel_edge_samples",
    "inject_edge_noise",
    "intermediate_adjacency_loss",
    "load_dataset",
    "local_edge_embed",
    "masked_cross_entropy",
    "node_encode",
    "normalize_adjacency",
    "save_dataset",
    "smooth_heaviside_gate",
    "topk_select",
    "train",
]
