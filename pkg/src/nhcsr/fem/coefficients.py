"""Piecewise-constant two-valued coefficient maps on an E x E cell grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError

PATTERNS = ("random", "checkerboard", "wave", "stride", "mix")
DEFAULT_CONTRAST = (1.0, 100.0)


@dataclass
class CoefficientMap:
    """Cell values ``values[i, j]`` on cell row ``i`` (y) and column ``j`` (x)."""

    values: np.ndarray
    pattern: str = "random"
    seed: int = 0
    contrast: tuple = DEFAULT_CONTRAST
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ConfigError(f"coefficient map must be square, got {self.values.shape}")
        if self.E < 2:
            raise ConfigError("coefficient map needs E >= 2")
        if not np.isin(self.values, self.contrast).all():
            raise ConfigError(f"coefficient values must lie in {self.contrast}")

    @property
    def E(self) -> int:
        return self.values.shape[0]

    @property
    def eps(self) -> float:
        return 1.0 / self.E

    def mask(self) -> np.ndarray:
        """uint8 mask: 0 for the low value, 1 for the high value."""
        return (self.values == self.contrast[1]).astype(np.uint8)

    def unit(self) -> np.ndarray:
        """Values mapped onto {0, 1} as network input."""
        return self.mask().astype(np.float64)

    @classmethod
    def from_mask(cls, mask, contrast=DEFAULT_CONTRAST, pattern="random", seed=0):
        lo, hi = contrast
        return cls(np.where(np.asarray(mask) != 0, hi, lo), pattern=pattern, seed=seed, contrast=tuple(contrast))


# ---------------------------------------------------------------- pattern specs


def parse_pattern(spec: str, E: int):
    """Turn a textual spec into ``(name, params)``.

    Accepted forms: ``random``, ``checkerboard[:period]``, ``wave[:amplitude:period]``,
    ``stride[:width]``, ``mix[:spec,spec,spec]``. Missing parameters scale with E.
    """
    spec = spec.strip()
    name, _, rest = spec.partition(":")
    if name not in PATTERNS:
        raise ConfigError(f"unknown coefficient pattern {name!r}")
    if name == "random":
        return name, {}
    if name == "checkerboard":
        return name, {"period": int(rest) if rest else max(1, E // 8)}
    if name == "wave":
        if rest:
            amp, period = rest.split(":")
            return name, {"amplitude": float(amp), "period": int(period)}
        return name, {"amplitude": max(1.0, E / 16), "period": max(2, E // 2)}
    if name == "stride":
        return name, {"width": int(rest) if rest else max(1, E // 16)}
    parts = rest.split(",") if rest else [f"checkerboard:{max(1, E // 8)}", "wave", "stride"]
    if len(parts) != 3:
        raise ConfigError("mix needs exactly three constituent patterns")
    subs = [parse_pattern(p, E) for p in parts]
    if any(s[0] in ("mix", "random") for s in subs):
        raise ConfigError("mix constituents must be deterministic patterns")
    return name, {"parts": subs}


def _bits(name: str, params: dict, E: int, rng) -> np.ndarray:
    i, j = np.meshgrid(np.arange(E), np.arange(E), indexing="ij")
    if name == "random":
        return rng.integers(0, 2, size=(E, E)).astype(bool)
    if name == "checkerboard":
        p = params["period"]
        if not 1 <= p < E:
            raise ConfigError(f"checkerboard period must be in [1, E), got {p}")
        return ((i // p + j // p) % 2).astype(bool)
    if name == "wave":
        amp, period = params["amplitude"], params["period"]
        if not 2 <= period < E:
            raise ConfigError(f"wave period must be in [2, E), got {period}")
        band = max(1, period // 2)
        shift = amp * np.sin(2 * np.pi * (j + 0.5) / period)
        return (np.floor((i + shift) / band) % 2).astype(bool)
    if name == "stride":
        w = params["width"]
        if not 1 <= w < E:
            raise ConfigError(f"stride width must be in [1, E), got {w}")
        return (((i + j) // w) % 2).astype(bool)
    raise ConfigError(f"unknown coefficient pattern {name!r}")


def mix_partition(E: int, rng) -> np.ndarray:
    """Random three-rectangle partition: labels in {0, 1, 2}, each label non-empty."""
    labels = np.empty((E, E), dtype=np.int64)
    first_axis = int(rng.integers(0, 2))
    cut1 = int(rng.integers(1, E))
    cut2 = int(rng.integers(1, E))
    i, j = np.meshgrid(np.arange(E), np.arange(E), indexing="ij")
    a, b = (i, j) if first_axis == 0 else (j, i)
    labels[a < cut1] = 0
    rest = a >= cut1
    labels[rest & (b < cut2)] = 1
    labels[rest & (b >= cut2)] = 2
    return labels


def gen_coefficient(pattern: str, E: int, seed: int = 0, contrast=DEFAULT_CONTRAST) -> CoefficientMap:
    """Coefficient map for a pattern spec; a pure function of (pattern, E, seed)."""
    if E < 2:
        raise ConfigError("E must be >= 2")
    lo, hi = contrast
    if lo <= 0 or hi <= 0:
        raise ConfigError("contrast values must be positive")
    name, params = parse_pattern(pattern, E)
    rng = np.random.default_rng(seed)
    labels = None
    if name == "mix":
        layers = [_bits(n, p, E, rng) for n, p in params["parts"]]
        labels = mix_partition(E, rng)
        bits = np.choose(labels, layers)
    else:
        bits = _bits(name, params, E, rng)
    return CoefficientMap(np.where(bits, hi, lo), pattern=pattern, seed=seed, contrast=tuple(contrast), labels=labels)


def constituent_maps(pattern: str, E: int, contrast=DEFAULT_CONTRAST) -> list:
    """The three deterministic layers a ``mix`` pattern draws from."""
    name, params = parse_pattern(pattern, E)
    if name != "mix":
        raise ConfigError("constituent_maps expects a mix pattern")
    lo, hi = contrast
    return [np.where(_bits(n, p, E, None), hi, lo) for n, p in params["parts"]]
