"""The continuous super-resolution network.

Data flow for a batch of B samples and Q query nodes:

    X (coarse FEM solution), A (coefficient)  --bicubic + stack-->  2 x E x E
    --conv stem + residual blocks-->  F : C x E x E
    coarse branch: local attention on F over its E x E node grid
    fine branch:   conv -> pixel shuffle -> local attention on the uE x uE grid
    sum -> MLP -> scalar, added to the bilinearly sampled X at each query.

Parameters live in a flat ``dict[str, Tensor]``; see :func:`init_params`.
"""

from __future__ import annotations

import numpy as np

from .. import numerics as nm
from ..errors import ConfigError, DimensionError
from ..numerics import Tensor
from .config import ModelConfig

NEIGHBOUR_OFFSETS = np.array([(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)])


# ---------------------------------------------------------------- parameters


def param_shapes(cfg: ModelConfig) -> dict:
    """Name -> (shape, fan_in) for every learnable tensor, in a fixed order."""
    C, D, G, M = cfg.channels, cfg.attn_dim, cfg.gabor_width, cfg.mlp_width
    shapes = {"enc.stem.w": ((C, 2, 3, 3), 18), "enc.stem.b": ((C,), 18)}
    for k in range(cfg.res_blocks):
        for j in (1, 2):
            shapes[f"enc.block{k}.conv{j}.w"] = ((C, C, 3, 3), 9 * C)
            shapes[f"enc.block{k}.conv{j}.b"] = ((C,), 9 * C)
    branches = ["lr", "hr"] if cfg.multiscale else ["lr"]
    if cfg.multiscale:
        u2 = cfg.shuffle ** 2
        shapes["hr.up.w"] = ((u2 * C, C, 3, 3), 9 * C)
        shapes["hr.up.b"] = ((u2 * C,), 9 * C)
    for br in branches:
        for proj in ("q", "k", "v"):
            shapes[f"{br}.w{proj}"] = ((C, D), C)
            shapes[f"{br}.b{proj}"] = ((D,), C)
        for layer, fan in (("g1", 2), ("g2", G)):
            shapes[f"{br}.{layer}.w"] = ((fan, G), fan)
            shapes[f"{br}.{layer}.b"] = ((G,), fan)
            if cfg.uses_omega:
                shapes[f"{br}.{layer}.omega"] = ((), None)
            if cfg.uses_spread:
                shapes[f"{br}.{layer}.s"] = ((), None)
        shapes[f"{br}.bias.w"] = ((G, 1), G)
        shapes[f"{br}.bias.b"] = ((1,), G)
        shapes[f"{br}.head.w"] = ((D, D), D)
        shapes[f"{br}.head.b"] = ((D,), D)
    shapes["mlp.w"] = ((D, M), D)
    shapes["mlp.b"] = ((M,), D)
    shapes["out.w"] = ((M, 1), M)
    shapes["out.b"] = ((1,), M)
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0) -> dict:
    """Uniform(+-sqrt(1/fan_in)) weights; Gabor scalars at omega0/s0; zero output head.

    The zero head makes the untrained model exactly the bilinear residual path.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, fan_in) in param_shapes(cfg).items():
        if name.endswith(".omega"):
            data = np.array(cfg.omega0)
        elif name.endswith(".s"):
            data = np.array(cfg.s0)
        elif name.startswith("out."):
            data = np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


# ---------------------------------------------------------------- encoder


def linear(x, params, prefix) -> Tensor:
    return nm.matmul(x, params[prefix + ".w"]) + params[prefix + ".b"]


def encode_batch(x_norm: np.ndarray, a_unit: np.ndarray, params: dict, cfg: ModelConfig) -> Tensor:
    """(B, H+1, H+1) normalized coarse fields and (B, E, E) {0,1} maps -> (B, C, E, E)."""
    x_norm = np.asarray(x_norm, dtype=np.float64)
    a_unit = np.asarray(a_unit, dtype=np.float64)
    if x_norm.ndim != 3 or a_unit.ndim != 3 or a_unit.shape[0] != x_norm.shape[0]:
        raise DimensionError("encode expects batched (B, N, N) fields and (B, E, E) coefficient maps")
    E = a_unit.shape[-1]
    if a_unit.shape[-2] != E:
        raise DimensionError("coefficient maps must be square")
    up = nm.bicubic_matrix(x_norm.shape[-1], E)
    xd = up @ x_norm @ up.T
    h = Tensor(np.ascontiguousarray(np.stack([xd, a_unit], axis=1)))
    h = nm.conv2d(h, params["enc.stem.w"], params["enc.stem.b"])
    for k in range(cfg.res_blocks):
        p = f"enc.block{k}"
        r = nm.relu(nm.conv2d(h, params[p + ".conv1.w"], params[p + ".conv1.b"]))
        h = h + nm.conv2d(r, params[p + ".conv2.w"], params[p + ".conv2.b"])
    return h


def encode(X, A, params: dict, cfg: ModelConfig, y_min: float = 0.0, y_max: float = 1.0) -> Tensor:
    """Single-sample encoder: GridField X and CoefficientMap A -> (C, E, E)."""
    span = (y_max - y_min) or 1.0
    xn = (X.values - y_min) / span
    return nm.reshape(encode_batch(xn[None], A.unit()[None], params, cfg), (cfg.channels, A.E, A.E))


# ---------------------------------------------------------------- coordinate encoding


def gabor(x, omega, s):
    """Real Gabor wavelet cos(omega x) * exp(-(s x)^2) on arrays."""
    return np.cos(omega * x) * np.exp(-((s * x) ** 2))


def _activation(z: Tensor, params: dict, prefix: str, encoding: str) -> Tensor:
    if encoding == "plain":
        return nm.relu(z)
    out = None
    if encoding in ("gabor", "sinusoid"):
        out = nm.cos(z * params[prefix + ".omega"])
    if encoding in ("gabor", "gaussian"):
        env = nm.exp(nm.neg(nm.square(z * params[prefix + ".s"])))
        out = env if out is None else out * env
    return out


def gabor_encode(delta, params: dict, prefix: str, cfg: ModelConfig) -> Tensor:
    """Two affine layers, each followed by the configured coordinate nonlinearity."""
    y = nm.as_tensor(delta)
    for layer in ("g1", "g2"):
        p = f"{prefix}.{layer}"
        y = _activation(linear(y, params, p), params, p, cfg.encoding)
    return y


# ---------------------------------------------------------------- local attention


def neighbourhood(coords: np.ndarray, n: int):
    """3x3 latent nodes around each query's nearest node on an n x n grid.

    Returns flat node ids (..., 9) and residues r_node - c (..., 9, 2). Windows
    are shifted inwards at the border so all nine nodes exist.
    """
    if n < 3:
        raise DimensionError("latent grid needs at least 3 nodes per side")
    px = nm.normalized_to_position(coords[..., 0], n)
    py = nm.normalized_to_position(coords[..., 1], n)
    cy = np.clip(np.rint(py).astype(np.int64), 1, n - 2)
    cx = np.clip(np.rint(px).astype(np.int64), 1, n - 2)
    ny = cy[..., None] + NEIGHBOUR_OFFSETS[:, 0]
    nx = cx[..., None] + NEIGHBOUR_OFFSETS[:, 1]
    node = nm.node_coordinates(n)
    residue = np.stack([node[nx] - coords[..., None, 0], node[ny] - coords[..., None, 1]], axis=-1)
    return ny * n + nx, residue


def lit_attention(F: Tensor, coords: np.ndarray, params: dict, prefix: str, cfg: ModelConfig,
                  return_weights: bool = False):
    """Local implicit attention of queries against their 3x3 latent neighbourhood.

    ``F`` is (B, C, n, n), ``coords`` (B, Q, 2) normalized ``(x, y)``. Returns
    (B, Q, D), plus the (B, Q, 9) attention weights if requested.
    """
    bn, c, n, _ = F.shape
    q_n = coords.shape[1]
    D = cfg.attn_dim
    ids, residue = neighbourhood(coords, n)
    ids = ids + (np.arange(bn) * n * n)[:, None, None]

    rows = nm.reshape(nm.transpose(F, (0, 2, 3, 1)), (bn * n * n, c))
    k_rows = nm.matmul(rows, params[f"{prefix}.wk"]) + params[f"{prefix}.bk"]
    v_rows = nm.matmul(rows, params[f"{prefix}.wv"]) + params[f"{prefix}.bv"]
    K = nm.gather_rows(k_rows, ids)  # (B, Q, 9, D)
    V = nm.gather_rows(v_rows, ids)

    py = nm.normalized_to_position(coords[..., 1], n)
    px = nm.normalized_to_position(coords[..., 0], n)
    z_q = nm.sample_at_positions(F, py, px)  # (B, Q, C)
    Qm = nm.matmul(z_q, params[f"{prefix}.wq"]) + params[f"{prefix}.bq"]

    scores = nm.tsum(nm.reshape(Qm, (bn, q_n, 1, D)) * K, axis=-1) * (1.0 / np.sqrt(D))
    enc = gabor_encode(residue, params, prefix, cfg)  # (B, Q, 9, G)
    bias = nm.reshape(linear(enc, params, prefix + ".bias"), (bn, q_n, 9))
    weights = nm.softmax(scores + bias, axis=-1)
    out = nm.tsum(nm.reshape(weights, (bn, q_n, 9, 1)) * V, axis=2)
    return (out, weights) if return_weights else out


def branch_features(J: Tensor, coords: np.ndarray, params: dict, prefix: str, cfg: ModelConfig) -> Tensor:
    return nm.relu(linear(lit_attention(J, coords, params, prefix, cfg), params, prefix + ".head"))


def fine_feature_map(F: Tensor, params: dict, cfg: ModelConfig) -> Tensor:
    return nm.pixel_shuffle(nm.conv2d(F, params["hr.up.w"], params["hr.up.b"]), cfg.shuffle)


def latent_maps(F: Tensor, params: dict, cfg: ModelConfig) -> list:
    """Coarse map, plus the shuffled fine map when the multiscale branch is on."""
    return [F, fine_feature_map(F, params, cfg)] if cfg.multiscale else [F]


def multiscale_iif(F: Tensor, coords: np.ndarray, params: dict, cfg: ModelConfig, maps=None) -> Tensor:
    """Coarse (+ fine) branch features summed and passed through the MLP -> (B, Q, M).

    ``maps`` lets callers reuse :func:`latent_maps` across query chunks.
    """
    maps = latent_maps(F, params, cfg) if maps is None else maps
    feats = branch_features(maps[0], coords, params, "lr", cfg)
    if cfg.multiscale:
        feats = feats + branch_features(maps[1], coords, params, "hr", cfg)
    return nm.relu(linear(feats, params, "mlp"))


def decode(F: Tensor, coords: np.ndarray, params: dict, cfg: ModelConfig, maps=None) -> Tensor:
    """Scalar network correction (B, Q) in normalized units."""
    h = multiscale_iif(F, coords, params, cfg, maps)
    out = linear(h, params, "out")
    return nm.reshape(out, out.shape[:-1])


# ---------------------------------------------------------------- forward map


def node_positions(n_in: int, n_out: int) -> np.ndarray:
    """Fractional index on an ``n_in`` grid of each node of an ``n_out`` grid (same square)."""
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def query_grid(n_out: int) -> np.ndarray:
    """All ``n_out**2`` node coordinates in row-major order as (x, y) pairs in [-1, 1]."""
    node = nm.node_coordinates(n_out)
    yy, xx = np.meshgrid(node, node, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=-1)


def target_size(n_in: int, alpha=None, n_out=None) -> int:
    """Resolve the output node count from an upscale factor or an explicit count."""
    if (alpha is None) == (n_out is None):
        raise ConfigError("give exactly one of alpha or an output node count")
    if n_out is None:
        if not alpha > 0:
            raise ConfigError(f"alpha must be positive, got {alpha}")
        exact = float(alpha) * (n_in - 1) + 1
        n_out = int(round(exact))
        if abs(exact - n_out) > 1e-9:
            raise ConfigError(f"alpha={alpha} gives a non-integer node count {exact:g} for {n_in} input nodes")
    if int(n_out) != n_out or n_out < 2:
        raise ConfigError(f"output node count must be an integer >= 2, got {n_out}")
    return int(n_out)


def predict_normalized(params: dict, cfg: ModelConfig, x_norm: np.ndarray, a_unit: np.ndarray,
                       coords: np.ndarray) -> Tensor:
    """Normalized prediction (B, Q) at query coordinates: bilinear X plus the network term.

    This is the differentiable map used for training.
    """
    x_norm = np.asarray(x_norm, dtype=np.float64)
    F = encode_batch(x_norm, a_unit, params, cfg)
    n = x_norm.shape[-1]
    base = nm.sample_at_positions(x_norm[:, None], nm.normalized_to_position(coords[..., 1], n),
                                  nm.normalized_to_position(coords[..., 0], n))
    return decode(F, coords, params, cfg) + base.data[..., 0]


def forward(X, A, params: dict, cfg: ModelConfig, alpha=None, n_out=None,
            y_min: float = 0.0, y_max: float = 1.0):
    """Super-resolve ``X`` guided by ``A`` onto an ``n_out`` x ``n_out`` node grid.

    Either ``alpha`` (with ``alpha * (N - 1) + 1`` integral) or ``n_out`` sets the
    target. Queries are decoded in chunks of ``cfg.query_chunk`` without taping.
    The bilinear base uses exact fractional node indices, so a zero output head
    at ``alpha=1`` returns ``X`` unchanged.
    """
    from ..fem.solver import GridField

    n_in = X.N
    n_out = target_size(n_in, alpha, n_out)
    span = (y_max - y_min) or 1.0
    pos = node_positions(n_in, n_out)
    py, px = np.meshgrid(pos, pos, indexing="ij")
    base = nm.sample_at_positions(X.values[None], py.ravel(), px.ravel()).data[:, 0]
    coords = query_grid(n_out)[None]
    net = np.empty(n_out * n_out)
    with nm.no_grad():
        F = encode_batch(((X.values - y_min) / span)[None], A.unit()[None], params, cfg)
        maps = latent_maps(F, params, cfg)
        for start in range(0, coords.shape[1], cfg.query_chunk):
            stop = start + cfg.query_chunk
            net[start:stop] = decode(F, coords[:, start:stop], params, cfg, maps).data[0]
    out = (base + span * net).reshape(n_out, n_out)
    out[0, :] = out[-1, :] = out[:, 0] = out[:, -1] = 0.0
    return GridField(out)
