"""Infinite-depth graph neural network with a closed-form spectral training
path, brute-force oracles, and a reproducible experiment CLI."""

from .graphs import ChainsSpec, Graph, generate_chains, load_graph, normalized_adjacency
from .model import (
    EignnModel,
    ForwardTrace,
    backward,
    contraction_factor,
    g_of_f,
    input_grad,
    load_model,
    loss_and_output_grad,
    save_model,
    spectral_forward,
)
from .trainer import (
    SpectralCache,
    TrainConfig,
    TrainReport,
    build_or_load_cache,
    evaluate,
    init_params,
    train,
)

__all__ = [
    "ChainsSpec",
    "EignnModel",
    "ForwardTrace",
    "Graph",
    "SpectralCache",
    "TrainConfig",
    "TrainReport",
    "backward",
    "build_or_load_cache",
    "contraction_factor",
    "evaluate",
    "g_of_f",
    "generate_chains",
    "init_params",
    "input_grad",
    "load_graph",
    "load_model",
    "loss_and_output_grad",
    "normalized_adjacency",
    "save_model",
    "spectral_forward",
    "train",
]

__version__ = "0.1.0"
