"""Tensor arithmetic with reverse-mode differentiation plus image primitives."""

from .gradcheck import grad_check
from .ops import (
    bicubic_matrix,
    bicubic_resize,
    bilinear_stencil,
    conv1x1,
    conv2d,
    grid_sample_bilinear,
    node_coordinates,
    normalized_to_position,
    pixel_shuffle,
    pixel_unshuffle,
    sample_at_positions,
    softmax,
)
from .spectral import fft2_power
from .tensor import (
    Tensor,
    TapeNode,
    absolute,
    add,
    as_tensor,
    cos,
    elementwise,
    exp,
    gather_rows,
    make_op,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sin,
    square,
    transpose,
    tsum,
)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked tensor feeding ``loss``."""
    loss.backward()
