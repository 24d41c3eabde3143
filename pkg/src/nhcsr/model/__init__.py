"""Coefficient-guided continuous super-resolution network."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ENCODINGS, ModelConfig
from .network import (
    decode,
    encode,
    encode_batch,
    forward,
    gabor,
    gabor_encode,
    init_params,
    latent_maps,
    lit_attention,
    multiscale_iif,
    neighbourhood,
    node_positions,
    param_shapes,
    predict_normalized,
    query_grid,
    target_size,
)
