"""Test-set evaluation of a checkpoint against the bicubic baseline, per upscale factor."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import numerics as nm
from .errors import ConfigError, DataContractError
from .fem import GridField, load_dataset
from .metrics import field_metrics, rapsd, write_metric_rows, write_rapsd_csv
from .model import Checkpoint, forward, load_checkpoint
from .train import normalize

METRICS = ("mse", "mae", "psnr", "ssim")
TABLE_FIELDS = ("method", "alpha", "n") + tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "std"))


def bicubic_upsample(X: GridField, n_out: int) -> GridField:
    R = nm.bicubic_matrix(X.N, n_out)
    return GridField(R @ X.values @ R.T)


def _load(ds):
    return load_dataset(ds) if isinstance(ds, (str, Path)) else ds


def evaluate(ckpt, datasets: dict, methods=("model", "bicubic")) -> dict:
    """Score ``methods`` on each dataset; ``datasets`` maps alpha -> NHCD path or (header, samples).

    Metrics are computed on fields mapped to [0, 1] by each test set's own range,
    the same map for every method. Returns ``{"table", "samples", "rapsd"}``:
    the summary rows (one per method and alpha), per-sample rows, and mean
    radial spectra keyed by (method, alpha), including the reference solutions.
    """
    ck = load_checkpoint(ckpt) if isinstance(ckpt, (str, Path)) else ckpt
    if not isinstance(ck, Checkpoint):
        raise ConfigError("evaluate needs a checkpoint path or Checkpoint")
    table, per_sample, spectra = [], [], {}
    for alpha, ds in datasets.items():
        header, samples = _load(ds)
        if not samples:
            raise DataContractError(f"test set for alpha={alpha} is empty")
        if header.alpha != alpha:
            raise DataContractError(f"dataset has alpha={header.alpha}, requested alpha={alpha}")
        lo, hi = header.y_min, header.y_max
        scores = {m: [] for m in methods}
        power = {m: [] for m in methods + ("reference",)}
        for k, s in enumerate(samples):
            target = normalize(s.Y.values, lo, hi)
            power["reference"].append(rapsd(target)[1])
            for m in methods:
                if m == "model":
                    out = forward(s.X, s.A, ck.params, ck.config, alpha=alpha, y_min=ck.y_min, y_max=ck.y_max)
                elif m == "bicubic":
                    out = bicubic_upsample(s.X, s.Y.N)
                else:
                    raise ConfigError(f"unknown method {m!r}")
                pred = normalize(out.values, lo, hi)
                row = field_metrics(pred, target)
                scores[m].append(row)
                per_sample.append({"sample_id": k, "alpha": alpha, **row, "method": m})
                power[m].append(rapsd(pred)[1])
        for m in methods:
            row = {"method": m, "alpha": alpha, "n": len(samples)}
            for name in METRICS:
                vals = np.array([r[name] for r in scores[m]])
                with np.errstate(invalid="ignore"):  # psnr is inf for exact fields
                    row[f"{name}_mean"] = float(vals.mean())
                    row[f"{name}_std"] = float(vals.std())
            table.append(row)
        for m, curves in power.items():
            mean = np.mean(curves, axis=0)
            spectra[(m, alpha)] = (np.arange(len(mean)), mean)
    return {"table": table, "samples": per_sample, "rapsd": spectra}


def write_table(path, table) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=TABLE_FIELDS, lineterminator="\n")
        wr.writeheader()
        for row in table:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_report(out_dir, result: dict) -> dict:
    """Write metrics.csv, samples.csv and rapsd.csv into ``out_dir``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out_dir / "metrics.csv", "samples": out_dir / "samples.csv",
             "rapsd": out_dir / "rapsd.csv"}
    write_table(paths["metrics"], result["table"])
    write_metric_rows(paths["samples"], result["samples"])
    write_rapsd_csv(paths["rapsd"], {f"{m}@{a}": c for (m, a), c in result["rapsd"].items()})
    return paths
