"""Figure-style exports: wrapped-intensity colour images and middle-row/column slices.

A field is mapped to [0, 255], scaled by a gain and wrapped back into range, so
small differences turn into visible bands. Images are written as binary PPM
(colour) or PGM (grayscale).
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import ConfigError, DimensionError

# 256 RGB entries of the standard "jet" colormap, sampled on linspace(0, 1, 256)
# and truncated to bytes.
_JET_HEX = (
    "00007f00008400008800008d00009100009600009a00009f0000a30000a80000ac0000b10000b60000ba0000bf0000c3"
    "0000c80000cc0000d10000d50000da0000de0000e30000e80000ec0000f10000f50000fa0000fe0000ff0000ff0000ff"
    "0000ff0004ff0008ff000cff0010ff0014ff0018ff001cff0020ff0024ff0028ff002cff0030ff0034ff0038ff003cff"
    "0040ff0044ff0048ff004cff0050ff0054ff0058ff005cff0060ff0064ff0068ff006cff0070ff0074ff0078ff007cff"
    "0080ff0084ff0088ff008cff0090ff0094ff0098ff009cff00a0ff00a4ff00a8ff00acff00b0ff00b4ff00b8ff00bcff"
    "00c0ff00c4ff00c8ff00ccff00d0ff00d4ff00d8ff00dcfe00e0fa00e4f702e8f405ecf108f0ed0cf4ea0ff8e712fce4"
    "15ffe118ffdd1cffda1fffd722ffd425ffd029ffcd2cffca2fffc732ffc336ffc039ffbd3cffba3fffb742ffb346ffb0"
    "49ffad4cffaa4fffa653ffa356ffa059ff9d5cff9a5fff9663ff9366ff9069ff8d6cff8970ff8673ff8376ff8079ff7d"
    "7cff7980ff7683ff7386ff7089ff6c8dff6990ff6693ff6396ff5f9aff5c9dff59a0ff56a3ff53a6ff4faaff4cadff49"
    "b0ff46b3ff42b7ff3fbaff3cbdff39c0ff36c3ff32c7ff2fcaff2ccdff29d0ff25d4ff22d7ff1fdaff1cddff18e0ff15"
    "e4ff12e7ff0feaff0cedff08f1fc05f4f802f7f400faf000feed00ffe900ffe500ffe200ffde00ffda00ffd700ffd300"
    "ffcf00ffcb00ffc800ffc400ffc000ffbd00ffb900ffb500ffb100ffae00ffaa00ffa600ffa300ff9f00ff9b00ff9800"
    "ff9400ff9000ff8c00ff8900ff8500ff8100ff7e00ff7a00ff7600ff7300ff6f00ff6b00ff6700ff6400ff6000ff5c00"
    "ff5900ff5500ff5100ff4d00ff4a00ff4600ff4200ff3f00ff3b00ff3700ff3400ff3000ff2c00ff2800ff2500ff2100"
    "ff1d00ff1a00ff1600fe1200fa0f00f50b00f10700ec0300e80000e30000de0000da0000d50000d10000cc0000c80000"
    "c30000bf0000ba0000b60000b10000ac0000a80000a300009f00009a00009600009100008d00008800008400007f0000"
)
JET = np.frombuffer(bytes.fromhex(_JET_HEX), dtype=np.uint8).reshape(256, 3)

COLORMAPS = ("jet", "gray")
RESIDUAL_GAIN = 20.0


def wrap_intensity(v: np.ndarray) -> np.ndarray:
    """Values above 255 are taken modulo 255; values in [0, 255] are kept."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v > 255.0, np.mod(v, 255.0), v)


def to_unit255(values: np.ndarray, lo=None, hi=None) -> np.ndarray:
    """Affine map of ``values`` onto [0, 255]; a constant field maps to 0."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min() if lo is None else lo
    hi = values.max() if hi is None else hi
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) * (255.0 / (hi - lo))


def intensity(values, gain: float = 8.0) -> np.ndarray:
    """Normalize -> multiply by ``gain`` -> wrap, returning uint8 levels (floor)."""
    v = wrap_intensity(to_unit255(values) * gain)
    return np.clip(np.floor(v), 0, 255).astype(np.uint8)


def residual_intensity(pred, ref, gain: float = RESIDUAL_GAIN) -> np.ndarray:
    """|pred - ref| on the reference's [0, 255] scale, amplified by ``gain`` and wrapped."""
    pred = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    ref = np.asarray(getattr(ref, "values", ref), dtype=np.float64)
    if pred.shape != ref.shape:
        raise DimensionError(f"residual needs equal shapes, got {pred.shape} and {ref.shape}")
    lo, hi = ref.min(), ref.max()
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    v = wrap_intensity(np.abs(pred - ref) * scale * gain)
    return np.clip(np.floor(v), 0, 255).astype(np.uint8)


def colorize(levels: np.ndarray, colormap: str = "jet") -> np.ndarray:
    if colormap == "jet":
        return JET[levels]
    if colormap == "gray":
        return levels
    raise ConfigError(f"unsupported colormap {colormap!r}; choose from {COLORMAPS}")


def write_image(path, levels: np.ndarray, colormap: str = "jet") -> None:
    """Binary PPM (P6) for colour maps, PGM (P5) for gray. Row 0 of the field is the top row."""
    img = colorize(np.asarray(levels, dtype=np.uint8), colormap)
    h, w = img.shape[:2]
    magic = b"P5" if img.ndim == 2 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


def read_image(path) -> np.ndarray:
    """Inverse of :func:`write_image` (for our own files only)."""
    raw = open(path, "rb").read()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    w, h = (int(t) for t in dims.split())
    ch = 3 if magic == b"P6" else 1
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w, ch) if ch == 3 else arr.reshape(h, w)


def plot_field(path, values, gain: float = 8.0, colormap: str = "jet") -> np.ndarray:
    levels = intensity(getattr(values, "values", values), gain)
    write_image(path, levels, colormap)
    return levels


def write_slices(path, values) -> None:
    """Middle row and middle column as CSV columns (index, row, column)."""
    v = np.asarray(getattr(values, "values", values), dtype=np.float64)
    mid_r, mid_c = v.shape[0] // 2, v.shape[1] // 2
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["index", "row", "column"])
        for i in range(max(v.shape)):
            r = repr(float(v[mid_r, i])) if i < v.shape[1] else ""
            c = repr(float(v[i, mid_c])) if i < v.shape[0] else ""
            wr.writerow([i, r, c])
