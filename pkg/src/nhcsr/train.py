"""Optimisation loop: query sampling, Adam, step-decay schedule, validation, resume."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nm
from .errors import ConfigError, ContractError, DataContractError, NumericError
from .fem import load_dataset
from .losses import LossConfig, l1_loss, total_loss
from .model import Checkpoint, ModelConfig, init_params, load_checkpoint, predict_normalized, query_grid
from .model import save_checkpoint

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("iter", "lr", "l1", "scs", "total", "val_l1")


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch: int = 8
    lr: float = 1e-4
    halve_at: int = 1000
    queries: int = 256
    seed: int = 0
    val_every: int = 100
    checkpoint_every: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        for name in ("iterations", "batch", "lr", "halve_at", "queries", "val_every"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.halve_at > self.iterations:
            raise ConfigError("halve_at must not exceed iterations")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- optimiser


@dataclass
class OptState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "OptState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict, opt: OptState, lr: float) -> None:
    """Bias-corrected Adam update of every parameter in place, using ``.grad``."""
    missing = [k for k, p in params.items() if p.grad is None]
    if missing:
        raise ContractError(f"no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1, c2 = 1.0 - b1 ** opt.step, 1.0 - b2 ** opt.step
    for k, p in params.items():
        g = p.grad
        m = opt.m[k] = b1 * opt.m[k] + (1.0 - b1) * g
        v = opt.v[k] = b2 * opt.v[k] + (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def lr_schedule(it: int, cfg: TrainConfig) -> float:
    return cfg.lr if it < cfg.halve_at else cfg.lr * 0.5


# ---------------------------------------------------------------- data plumbing


def normalize(values, y_min: float, y_max: float) -> np.ndarray:
    span = (y_max - y_min) or 1.0
    return (np.asarray(values, dtype=np.float64) - y_min) / span


def sample_queries(sample, n: int, rng: np.random.Generator):
    """``n`` distinct fine-grid nodes: normalized (x, y) coordinates and raw target values."""
    nf = sample.Y.N
    if n > nf * nf:
        raise ContractError(f"asked for {n} queries from a {nf}x{nf} grid")
    idx = rng.choice(nf * nf, size=n, replace=False)
    return query_grid(nf)[idx], sample.Y.values.ravel()[idx]


def make_batch(samples, ids, n_queries: int, rng, y_min: float, y_max: float):
    """Stack inputs for the selected samples and draw their queries (in sample order)."""
    xs = np.stack([normalize(samples[i].X.values, y_min, y_max) for i in ids])
    As = np.stack([samples[i].A.unit() for i in ids])
    coords, targets = zip(*(sample_queries(samples[i], n_queries, rng) for i in ids))
    return xs, As, np.stack(coords), normalize(np.stack(targets), y_min, y_max)


def validation_l1(params, cfg: ModelConfig, batch) -> float:
    """Per-sample L1 on a fixed query set, averaged over the validation samples."""
    xs, As, coords, targets = batch
    total = 0.0
    with nm.no_grad():
        for s in range(0, len(xs), 8):
            pred = predict_normalized(params, cfg, xs[s:s + 8], As[s:s + 8], coords[s:s + 8])
            total += float(l1_loss(pred, targets[s:s + 8]).data) * len(pred.data)
    return total / len(xs)


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    params: dict
    history: list
    checkpoint: Path | None
    y_min: float
    y_max: float


def _state_checkpoint(params, cfg, opt, rng, it, history, y_min, y_max) -> Checkpoint:
    arrays = {f"opt/m/{k}": v for k, v in opt.m.items()}
    arrays.update({f"opt/v/{k}": v for k, v in opt.v.items()})
    extra = {"iteration": it, "opt_step": opt.step, "rng": rng.bit_generator.state,
             "train": {k: v for k, v in cfg.to_dict().items() if k != "model"}, "history": history}
    return Checkpoint(cfg.model, params, y_min, y_max, extra, arrays)


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(HISTORY_FIELDS)
        for row in history:
            wr.writerow([row["iter"]] + [repr(float(row[k])) for k in HISTORY_FIELDS[1:]])


def train(cfg: TrainConfig, train_data, val_data=None, out_dir=None, resume=None, stop_at=None) -> TrainResult:
    """Run (or continue) training.

    ``train_data``/``val_data`` are NHCD paths or ``(header, samples)`` pairs; with
    no validation set the first samples of the training set (up to 8) are used.
    ``resume`` is a checkpoint written by an earlier call with the same
    configuration. ``stop_at`` ends the run early at that iteration (the state is
    still checkpointed), which is how interrupted runs are produced.
    """
    header, samples = load_dataset(train_data) if isinstance(train_data, (str, Path)) else train_data
    if not samples:
        raise DataContractError("training set is empty")
    if val_data is None:
        vsamples = samples[:8]
    else:
        vsamples = (load_dataset(val_data) if isinstance(val_data, (str, Path)) else val_data)[1]
        if not vsamples:
            raise DataContractError("validation set is empty")
    if cfg.queries > samples[0].Y.N ** 2:
        raise ConfigError(f"queries={cfg.queries} exceeds the {samples[0].Y.N ** 2} fine nodes")
    n_coarse = samples[0].X.N
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if resume is None:
        y_min, y_max = header.y_min, header.y_max
        params = init_params(cfg.model, cfg.seed)
        opt = OptState.zeros_like(params)
        rng = np.random.default_rng(cfg.seed)
        start, history = 0, []
    else:
        ck = load_checkpoint(resume) if not isinstance(resume, Checkpoint) else resume
        if ck.config != cfg.model:
            raise ConfigError("resume checkpoint was written with a different model configuration")
        y_min, y_max, params = ck.y_min, ck.y_max, ck.params
        opt = OptState({k: ck.arrays[f"opt/m/{k}"] for k in params},
                       {k: ck.arrays[f"opt/v/{k}"] for k in params}, ck.extra["opt_step"])
        rng = np.random.default_rng()
        rng.bit_generator.state = ck.extra["rng"]
        start, history = ck.extra["iteration"], list(ck.extra["history"])

    # fixed validation queries, independent of the training stream
    vrng = np.random.default_rng([cfg.seed, 1])
    val_batch = make_batch(vsamples, range(len(vsamples)), min(cfg.queries, vsamples[0].Y.N ** 2), vrng,
                           y_min, y_max)
    n = len(samples)
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    ckpt_path = None

    def diverged(it, exc, ids=()):
        msg = f"non-finite value at iteration {it}: {exc}"
        if out_dir is not None:
            dump = out_dir / "diverged.nhck"
            save_checkpoint(dump, _state_checkpoint(params, cfg, opt, rng, it, history, y_min, y_max))
            (out_dir / "diverged.json").write_text(json.dumps(
                {"iteration": it, "lr": lr_schedule(it, cfg), "error": str(exc),
                 "batch": [int(i) for i in ids]}, indent=1))
            msg += f" (state dumped to {dump})"
        return NumericError(msg)

    try:
        val_l1 = history[-1]["val_l1"] if history else validation_l1(params, cfg.model, val_batch)
    except NumericError as exc:
        raise diverged(start, exc) from exc

    for it in range(start, end):
        lr = lr_schedule(it, cfg)
        ids = rng.choice(n, size=cfg.batch, replace=cfg.batch > n)
        xs, As, coords, targets = make_batch(samples, ids, cfg.queries, rng, y_min, y_max)
        for p in params.values():
            p.grad = None
        done = it + 1
        try:
            pred = predict_normalized(params, cfg.model, xs, As, coords)
            loss, l1, scs = total_loss(pred, targets, cfg.loss, rng, n_coarse=n_coarse)
            loss.backward()
            adam_step(params, opt, lr)
            if done % cfg.val_every == 0 or done == cfg.iterations:
                val_l1 = validation_l1(params, cfg.model, val_batch)
        except NumericError as exc:
            raise diverged(it, exc, ids) from exc
        history.append({"iter": done, "lr": lr, "l1": l1, "scs": scs, "total": float(loss.data),
                        "val_l1": val_l1})
        if done % cfg.val_every == 0:
            log.info("iter %d  loss %.5f  val_l1 %.5f", done, float(loss.data), val_l1)
        if out_dir is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_checkpoint(out_dir / f"ckpt_{done:07d}.nhck",
                            _state_checkpoint(params, cfg, opt, rng, done, history, y_min, y_max))

    if out_dir is not None:
        name = "final.nhck" if end == cfg.iterations else f"ckpt_{end:07d}.nhck"
        ckpt_path = out_dir / name
        save_checkpoint(ckpt_path, _state_checkpoint(params, cfg, opt, rng, end, history, y_min, y_max))
        write_history(out_dir / "history.csv", history)
    return TrainResult(params, history, ckpt_path, y_min, y_max)
