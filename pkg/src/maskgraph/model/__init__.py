"""Landmark network, its layers and checkpoints."""

from .checkpoint import CheckpointState, load_checkpoint, read_header, save_checkpoint
from .layers import ChebConv, cheb_conv, igsc, igsc_sample, reparameterize, scaled_laplacian
from .network import AuxDecoder, Encoder, GraphDecoder, MaskHybridGNet, ModelOutput, model_input

__all__ = [
    "AuxDecoder",
    "ChebConv",
    "CheckpointState",
    "Encoder",
    "GraphDecoder",
    "MaskHybridGNet",
    "ModelOutput",
    "cheb_conv",
    "igsc",
    "igsc_sample",
    "load_checkpoint",
    "model_input",
    "read_header",
    "reparameterize",
    "save_checkpoint",
    "scaled_laplacian",
]
