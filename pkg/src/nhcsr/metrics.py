"""Field-comparison metrics and radial power spectra, plus their CSV writers.

All metrics expect values already mapped to [0, 1] by the dataset range.
"""

from __future__ import annotations

import csv

import numpy as np

from . import _kernels
from .errors import DimensionError
from .numerics import fft2_power

SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

METRIC_FIELDS = ("sample_id", "alpha", "mse", "mae", "psnr", "ssim")


def _values(f) -> np.ndarray:
    return np.asarray(getattr(f, "values", f), dtype=np.float64)


def _pair(pred, target):
    p, t = _values(pred), _values(target)
    if p.shape != t.shape:
        raise DimensionError(f"fields differ in shape: {p.shape} vs {t.shape}")
    return p, t


def mse(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean((p - t) ** 2))


def mae(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t)))


def psnr(pred, target) -> float:
    """Peak signal-to-noise ratio for unit peak; ``inf`` for identical fields."""
    err = mse(pred, target)
    return float("inf") if err == 0 else float(-10.0 * np.log10(err))


def ssim(pred, target, win: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all ``win`` x ``win`` windows (stride 1, uniform weights).

    Moments use population statistics. The expression is written symmetrically so
    ``ssim(x, y) == ssim(y, x)`` and ``ssim(x, x) == 1`` hold exactly.
    """
    x, y = _pair(pred, target)
    if x.ndim != 2 or min(x.shape) < win:
        raise DimensionError(f"ssim needs a 2-D field of at least {win}x{win}, got {x.shape}")
    mx, my = _kernels.box_mean(x, win), _kernels.box_mean(y, win)
    sxx = _kernels.box_mean(x * x, win) - mx * mx
    syy = _kernels.box_mean(y * y, win) - my * my
    sxy = _kernels.box_mean(x * y, win) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def rapsd(field, full: bool = False):
    """Radially averaged power spectrum.

    Power from :func:`fft2_power` is grouped by the rounded distance of each bin
    from the zero frequency. Returns ``(radii, mean_power, counts)`` for radii
    0..floor(min(H, W)/2), or for every annulus that occurs when ``full`` is set
    (the corners of the spectrum lie beyond the inscribed circle).
    """
    power = fft2_power(_values(field))
    h, w = power.shape
    yy, xx = np.indices((h, w))
    radius = np.rint(np.hypot(yy - h // 2, xx - w // 2)).astype(np.int64).ravel()
    counts = np.bincount(radius)
    sums = np.bincount(radius, weights=power.ravel())
    n = len(counts) if full else min(h, w) // 2 + 1
    counts, sums = counts[:n], sums[:n]
    mean_power = np.divide(sums, counts, out=np.zeros(n), where=counts > 0)
    return np.arange(n), mean_power, counts


def field_metrics(pred, target) -> dict:
    return {"mse": mse(pred, target), "mae": mae(pred, target),
            "psnr": psnr(pred, target), "ssim": ssim(pred, target)}


def write_metric_rows(path, rows) -> None:
    """Per-sample rows with columns sample_id, alpha, mse, mae, psnr, ssim (extra keys kept)."""
    rows = list(rows)
    extra = [k for k in (rows[0] if rows else {}) if k not in METRIC_FIELDS]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(METRIC_FIELDS) + extra, lineterminator="\n")
        wr.writeheader()
        for row in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_rapsd_csv(path, curves: dict) -> None:
    """``curves`` maps a method label to ``(radii, power)``; one row per (method, radius)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["method", "radius", "power"])
        for label, (radii, power) in curves.items():
            for r, p in zip(radii, power):
                wr.writerow([label, int(r), repr(float(p))])
