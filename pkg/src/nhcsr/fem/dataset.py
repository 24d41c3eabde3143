"""Paired coarse/fine FEM samples and the NHCD binary dataset format.

Layout (all little-endian)::

    b"NHCD"  u32 version  u32 n_samples  u32 E  u32 H  u32 alpha
    u32 source_tag  f64 source_value  f64 y_min  f64 y_max
    per sample:
        E*E u8 coefficient mask (0 -> 1, 1 -> 100)
        (H+1)^2 f64 coarse solution X
        (alpha*H+1)^2 f64 fine solution Y
        u32 CRC32 of the three blocks above
"""

from __future__ import annotations

import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import ChecksumError, ConfigError, FormatError
from .assembly import FemProblem, Source
from .coefficients import DEFAULT_CONTRAST, CoefficientMap, gen_coefficient
from .solver import GridField, fem_solve

MAGIC = b"NHCD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIddd")


@dataclass
class DatasetHeader:
    n_samples: int
    E: int
    H: int
    alpha: int
    source: Source = Source()
    y_min: float = 0.0
    y_max: float = 0.0

    @property
    def n_coarse(self) -> int:
        return self.H + 1

    @property
    def n_fine(self) -> int:
        return self.alpha * self.H + 1

    def sample_nbytes(self) -> int:
        return self.E ** 2 + 8 * (self.n_coarse ** 2 + self.n_fine ** 2) + 4


@dataclass
class DatasetSample:
    X: GridField
    A: CoefficientMap
    Y: GridField
    alpha: int
    y_min: float = 0.0
    y_max: float = 1.0

    @property
    def h(self) -> float:
        return 1.0 / (self.X.N - 1)

    @property
    def eps(self) -> float:
        return 1.0 / self.A.E


def check_resolutions(E: int, H: int, alpha: int) -> None:
    if alpha < 1:
        raise ConfigError("alpha must be a positive integer")
    if E < 2 or H < 2:
        raise ConfigError("E and H must be >= 2")
    for n in (H, alpha * H):
        if E % n and n % E:
            raise ConfigError(f"mesh resolution {n} is incompatible with coefficient grid {E}")


def sample_seeds(seed: int, n: int) -> list:
    """Independent per-sample seeds from one master seed (order-stable)."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _solve_pair(args):
    pattern, E, H, alpha, seed, source = args
    A = gen_coefficient(pattern, E, seed)
    X = fem_solve(FemProblem(A, H, source))
    Y = X if alpha == 1 else fem_solve(FemProblem(A, alpha * H, source))
    return A, X, Y


def build_samples(n: int, E: int, H: int, alpha: int, pattern: str = "random", seed: int = 0,
                  source: Source = Source(), workers: int = 1) -> tuple:
    """Solve ``n`` paired problems; returns (header, samples) with the global Y range filled in."""
    check_resolutions(E, H, alpha)
    jobs = [(pattern, E, H, alpha, s, source) for s in sample_seeds(seed, n)]
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(_solve_pair, jobs))
    else:
        pairs = [_solve_pair(j) for j in jobs]
    if pairs:
        y_min = float(min(p[2].values.min() for p in pairs))
        y_max = float(max(p[2].values.max() for p in pairs))
    else:
        y_min = y_max = 0.0
    header = DatasetHeader(n, E, H, alpha, source, y_min, y_max)
    samples = [DatasetSample(X, A, Y, alpha, y_min, y_max) for A, X, Y in pairs]
    return header, samples


def build_dataset(path, n: int, E: int, H: int, alpha: int, pattern: str = "random", seed: int = 0,
                  source: Source = Source(), workers: int = 1) -> DatasetHeader:
    header, samples = build_samples(n, E, H, alpha, pattern, seed, source, workers)
    write_dataset(path, header, samples)
    return header


# ---------------------------------------------------------------- serialization


def _sample_bytes(s: DatasetSample, header: DatasetHeader) -> bytes:
    if tuple(s.A.contrast) != DEFAULT_CONTRAST:
        raise FormatError("NHCD stores masks for the (1, 100) contrast only")
    if s.A.E != header.E or s.X.N != header.n_coarse or s.Y.N != header.n_fine:
        raise FormatError("sample sizes do not match the dataset header")
    body = (s.A.mask().tobytes()
            + s.X.values.astype("<f8").tobytes()
            + s.Y.values.astype("<f8").tobytes())
    return body + struct.pack("<I", zlib.crc32(body))


def write_dataset(path, header: DatasetHeader, samples) -> None:
    samples = list(samples)
    if len(samples) != header.n_samples:
        raise FormatError(f"header declares {header.n_samples} samples, got {len(samples)}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, header.n_samples, header.E, header.H, header.alpha,
                              header.source.tag, header.source.value, header.y_min, header.y_max))
        for s in samples:
            fh.write(_sample_bytes(s, header))


def read_header(fh) -> DatasetHeader:
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise FormatError("truncated dataset header")
    magic, version, n, E, H, alpha, tag, value, y_min, y_max = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, not an NHCD dataset")
    if version != VERSION:
        raise FormatError(f"unsupported NHCD version {version}")
    try:
        source = Source.from_tag(tag, value)
    except ConfigError as exc:
        raise FormatError(str(exc)) from None
    return DatasetHeader(n, E, H, alpha, source, y_min, y_max)


def read_dataset(path) -> Iterator[DatasetSample]:
    """Stream samples; each one is checksummed before it is yielded."""
    with open(path, "rb") as fh:
        header = read_header(fh)
        size = header.sample_nbytes()
        nc, nf, E = header.n_coarse, header.n_fine, header.E
        for k in range(header.n_samples):
            raw = fh.read(size)
            if len(raw) < size:
                raise FormatError(f"truncated dataset: sample {k} incomplete")
            body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
            if zlib.crc32(body) != crc:
                raise ChecksumError(f"checksum mismatch in sample {k}")
            mask = np.frombuffer(body, np.uint8, E * E).reshape(E, E)
            if mask.max(initial=0) > 1:
                raise FormatError(f"invalid coefficient mask in sample {k}")
            off = E * E
            X = np.frombuffer(body, "<f8", nc * nc, off).reshape(nc, nc).astype(np.float64)
            off += 8 * nc * nc
            Y = np.frombuffer(body, "<f8", nf * nf, off).reshape(nf, nf).astype(np.float64)
            yield DatasetSample(GridField(X), CoefficientMap.from_mask(mask), GridField(Y), header.alpha,
                                header.y_min, header.y_max)
        if fh.read(1):
            raise FormatError("trailing bytes after the last sample")


def load_dataset(path) -> tuple:
    """Read and validate the whole file; returns (header, samples)."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = read_header(fh)
    return header, list(read_dataset(path))
