"""Training objective: per-sample L1 plus a stochastic cosine-similarity term."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, DimensionError
from .numerics import Tensor, make_op


@dataclass
class LossConfig:
    """``lam`` weights the SCS term. ``points``/``repeats`` of None mean H+1 (coarse node count)."""

    lam: float = 0.1
    points: int | None = None
    repeats: int | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        for name in ("points", "repeats"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be >= 1")

    def resolved(self, n_coarse: int) -> tuple:
        return (self.points or n_coarse, self.repeats or n_coarse)


def _check_pair(pred, target) -> tuple:
    pred = nm.as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2:
        raise DimensionError(f"loss expects matching (B, Q) arrays, got {pred.shape} and {target.shape}")
    return pred, target


def l1_loss(pred, target) -> Tensor:
    """Sum of absolute errors per sample, averaged over the batch."""
    pred, target = _check_pair(pred, target)
    return nm.tsum(nm.absolute(pred - target)) * (1.0 / pred.shape[0])


def scs_draws(n_queries: int, points: int, repeats: int, rng: np.random.Generator) -> np.ndarray:
    """(repeats, points) index sets, each drawn without replacement; shared across the batch."""
    if points > n_queries:
        raise ContractError(f"cannot draw {points} points from {n_queries} queries")
    return np.stack([rng.choice(n_queries, size=points, replace=False) for _ in range(repeats)])


def scs_loss(pred, target, cfg: LossConfig = None, rng: np.random.Generator = None,
             draws: np.ndarray | None = None, n_coarse: int | None = None) -> Tensor:
    """One minus the mean cosine similarity between randomly drawn point subsets.

    Pass ``draws`` to fix the subsets, otherwise they come from ``rng``. A draw in
    which either vector has zero norm counts as similarity 0 and contributes no
    gradient.
    """
    pred, target = _check_pair(pred, target)
    bn, q = pred.shape
    if draws is None:
        cfg = cfg or LossConfig()
        if rng is None:
            raise ContractError("scs_loss needs an rng or explicit draws")
        points, repeats = cfg.resolved(n_coarse if n_coarse is not None else q)
        draws = scs_draws(q, points, repeats, rng)
    draws = np.asarray(draws, dtype=np.int64)
    p = pred.data[:, draws]  # (B, R, P)
    t = target[:, draws]
    pn = np.linalg.norm(p, axis=-1)
    tn = np.linalg.norm(t, axis=-1)
    ok = (pn > 0) & (tn > 0)
    denom = np.where(ok, pn * tn, 1.0)
    dots = np.einsum("brp,brp->br", p, t)
    sim = np.where(ok, dots / denom, 0.0)
    count = sim.size
    value = np.asarray(1.0 - sim.sum() / count)

    def backward(g):
        # d cos / d p = t / (|p||t|) - cos * p / |p|^2
        pn2 = np.where(ok, pn * pn, 1.0)
        dsim = np.where(ok[..., None], t / denom[..., None] - sim[..., None] * p / pn2[..., None], 0.0)
        gp = np.zeros((bn, q))
        for r in range(draws.shape[0]):
            gp[:, draws[r]] += dsim[:, r]
        return (gp * (-float(g) / count),)

    return make_op("scs", value, (pred,), backward)


def total_loss(pred, target, cfg: LossConfig = None, rng: np.random.Generator = None,
               draws: np.ndarray | None = None, n_coarse: int | None = None) -> tuple:
    """``L1 + lam * SCS``; returns (total, l1, scs) with the components as floats.

    The SCS term is skipped (and no random draws are consumed) when ``lam == 0``.
    """
    cfg = cfg or LossConfig()
    l1 = l1_loss(pred, target)
    if cfg.lam == 0:
        return l1, float(l1.data), float("nan")
    scs = scs_loss(pred, target, cfg, rng, draws, n_coarse)
    return l1 + scs * cfg.lam, float(l1.data), float(scs.data)
