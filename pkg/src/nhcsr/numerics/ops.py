"""Image-shaped differentiable ops: convolution, sampling, shuffling, softmax, resize.

Grids are node-centred: normalized coordinate -1 sits on node 0 and +1 on
node N-1. A coordinate pair is ``(x, y)`` with ``x`` running along the last
(width) axis and ``y`` along the height axis.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import DimensionError, NumericError
from .tensor import Tensor, as_tensor, make_op


def conv2d(x, w, b) -> Tensor:
    """3x3 cross-correlation, zero padding 1, stride 1.

    ``x`` is (C_in, H, W) or batched (B, C_in, H, W); ``w`` is (C_out, C_in, 3, 3)
    and ``b`` is (C_out,).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: kernel must be (C_out, C_in, 3, 3), got {w.shape}")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or xd.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} does not match kernel {w.shape}")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"conv2d: bias {b.shape} does not match {w.shape[0]} output channels")

    bn, cin, h, wd = xd.shape
    cout = w.shape[0]
    cols = _kernels.im2col3(xd)
    wmat = w.data.reshape(cout, cin * 9)
    rows = cols @ wmat.T
    rows += b.data
    out = rows.reshape(bn, h, wd, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out[0] if squeeze else out)

    def backward(g):
        g4 = g[None] if squeeze else g
        grows = g4.transpose(0, 2, 3, 1).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _kernels.col2im3(grows @ wmat, bn, cin, h, wd)
            gx = gx[0] if squeeze else gx
        if w.requires_grad:
            gw = (grows.T @ cols).reshape(w.shape)
        if b.requires_grad:
            gb = grows.sum(axis=0)
        return gx, gw, gb

    return make_op("conv2d", out, (x, w, b), backward)


def conv1x1(x, w, b) -> Tensor:
    """Pointwise channel mixing: ``w`` is (C_out, C_in); works on (C, H, W) or (B, C, H, W)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.shape[-3] != w.shape[1]:
        raise DimensionError(f"conv1x1: input channels {x.shape[-3]} != {w.shape[1]}")
    xd, wd, bd = x.data, w.data, b.data
    out = np.einsum("oc,...chw->...ohw", wd, xd) + bd[:, None, None]

    def backward(g):
        gx = np.einsum("oc,...ohw->...chw", wd, g) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            # fold any batch axis into the spatial sum
            flat = lambda a: a.reshape(-1, a.shape[-3], a.shape[-2] * a.shape[-1])  # noqa: E731
            gw = np.einsum("boh,bch->oc", flat(g), flat(xd))
        gb = g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 3)) if b.requires_grad else None
        return gx, gw, gb

    return make_op("conv1x1", out, (x, w, b), backward)


# ---------------------------------------------------------------- sampling


def normalized_to_position(coords, n: int) -> np.ndarray:
    """Map normalized coordinates to fractional node indices on an ``n``-node axis."""
    return (np.asarray(coords, dtype=np.float64) + 1.0) * 0.5 * (n - 1)


def node_coordinates(n: int) -> np.ndarray:
    """Normalized coordinates of the ``n`` nodes of an axis."""
    if n == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(n) / (n - 1)


def bilinear_stencil(pos_y, pos_x, h: int, w: int):
    """Flat corner indices (Q, 4) and weights (Q, 4) for fractional node positions.

    Positions are clamped into ``[0, n-1]``; a position sitting on a node gives
    weight exactly 1 on that node.
    """
    if h < 2 or w < 2:
        raise DimensionError("bilinear sampling needs at least 2 nodes per axis")
    py = np.clip(np.asarray(pos_y, dtype=np.float64).ravel(), 0.0, h - 1)
    px = np.clip(np.asarray(pos_x, dtype=np.float64).ravel(), 0.0, w - 1)
    i0 = np.minimum(np.floor(py).astype(np.int64), h - 2)
    j0 = np.minimum(np.floor(px).astype(np.int64), w - 2)
    ty = py - i0
    tx = px - j0
    base = i0 * w + j0
    idx = np.stack([base, base + 1, base + w, base + w + 1], axis=1)
    wts = np.stack([(1 - ty) * (1 - tx), (1 - ty) * tx, ty * (1 - tx), ty * tx], axis=1)
    return np.ascontiguousarray(idx), np.ascontiguousarray(wts)


def sample_at_positions(f, pos_y, pos_x) -> Tensor:
    """Bilinear samples of ``f`` at fractional node positions.

    ``f`` is (C, H, W) with positions of shape (Q,), giving (Q, C); or batched
    (B, C, H, W) with positions (B, Q), giving (B, Q, C).
    """
    f = as_tensor(f)
    batched = f.ndim == 4
    fd = f.data if batched else f.data[None]
    bn, c, h, w = fd.shape
    pos_y = np.asarray(pos_y, dtype=np.float64).reshape(bn, -1)
    pos_x = np.asarray(pos_x, dtype=np.float64).reshape(bn, -1)
    q = pos_y.shape[1]
    idx, wts = bilinear_stencil(pos_y, pos_x, h, w)
    idx = idx + (np.repeat(np.arange(bn), q) * (h * w))[:, None]
    rows = fd.reshape(bn, c, h * w).transpose(0, 2, 1).reshape(bn * h * w, c)
    out = _kernels.bilinear_gather(rows, idx, wts)
    out = out.reshape(bn, q, c) if batched else out

    def backward(g):
        grows = _kernels.bilinear_scatter(g.reshape(-1, c), idx, wts, bn * h * w)
        gf = grows.reshape(bn, h * w, c).transpose(0, 2, 1).reshape(bn, c, h, w)
        return (np.ascontiguousarray(gf if batched else gf[0]),)

    return make_op("grid_sample_bilinear", out, (f,), backward)


def grid_sample_bilinear(f, coords) -> Tensor:
    """Bilinear sampling at normalized ``coords`` (..., 2) ordered ``(x, y)``.

    Out-of-range coordinates are clamped to the boundary.
    """
    f = as_tensor(f)
    coords = np.asarray(coords.data if isinstance(coords, Tensor) else coords, dtype=np.float64)
    if coords.shape[-1] != 2:
        raise DimensionError(f"coords must end in a pair axis, got {coords.shape}")
    h, w = f.shape[-2:]
    return sample_at_positions(f, normalized_to_position(coords[..., 1], h), normalized_to_position(coords[..., 0], w))


# ---------------------------------------------------------------- reshuffles


def pixel_shuffle(x, u: int) -> Tensor:
    """(..., u*u*C, H, W) -> (..., C, u*H, u*W) with out[c, u*i+p, u*j+q] = in[c*u*u + p*u + q, i, j]."""
    x = as_tensor(x)
    if u < 1:
        raise DimensionError("upscale factor must be >= 1")
    *lead, cu, h, w = x.shape
    if cu % (u * u):
        raise DimensionError(f"pixel_shuffle: {cu} channels not divisible by {u * u}")
    c = cu // (u * u)
    nl = len(lead)
    perm = tuple(range(nl)) + tuple(nl + k for k in (0, 3, 1, 4, 2))
    out = x.data.reshape(*lead, c, u, u, h, w).transpose(perm).reshape(*lead, c, u * h, u * w)
    inv = np.argsort(perm)

    def backward(g):
        gr = g.reshape(*lead, c, h, u, w, u).transpose(inv).reshape(x.shape)
        return (np.ascontiguousarray(gr),)

    return make_op("pixel_shuffle", np.ascontiguousarray(out), (x,), backward)


def pixel_unshuffle(x, u: int) -> np.ndarray:
    """Inverse index map of :func:`pixel_shuffle` on plain arrays."""
    x = np.asarray(x)
    *lead, c, hu, wu = x.shape
    h, w = hu // u, wu // u
    nl = len(lead)
    perm = tuple(range(nl)) + tuple(nl + k for k in (0, 2, 4, 1, 3))
    return x.reshape(*lead, c, h, u, w, u).transpose(perm).reshape(*lead, c * u * u, h, w)


# ---------------------------------------------------------------- softmax


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not np.isfinite(x.data).all():
        raise NumericError("softmax: non-finite input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_op("softmax", y, (x,), backward)


# ---------------------------------------------------------------- bicubic


def _catmull_rom(t):
    a = -0.5
    t = np.abs(t)
    return np.where(
        t <= 1,
        ((a + 2) * t - (a + 3)) * t * t + 1,
        np.where(t < 2, ((a * t - 5 * a) * t + 8 * a) * t - 4 * a, 0.0),
    )


def bicubic_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) node-centred Catmull-Rom resampling matrix with edge replication."""
    if n_out < 1:
        raise DimensionError("output extent must be >= 1")
    if n_in < 2:
        raise DimensionError("bicubic resize needs at least 2 input nodes")
    if n_out == n_in:
        return np.eye(n_in)
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1) if n_out > 1 else np.zeros(1)
    i0 = np.floor(pos).astype(np.int64)
    t = pos - i0
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for k in range(-1, 3):
        taps = np.clip(i0 + k, 0, n_in - 1)
        np.add.at(mat, (rows, taps), _catmull_rom(t - k))
    return mat


def bicubic_resize(f, out_h: int, out_w: int) -> Tensor:
    """Resize (C, H, W) or (H, W) to the requested node counts."""
    f = as_tensor(f)
    h, w = f.shape[-2:]
    ry = bicubic_matrix(h, out_h)
    rx = bicubic_matrix(w, out_w)
    out = ry @ f.data @ rx.T
    return make_op("bicubic_resize", out, (f,), lambda g: (ry.T @ g @ rx,))
