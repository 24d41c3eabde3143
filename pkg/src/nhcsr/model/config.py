from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError

ENCODINGS = ("plain", "sinusoid", "gaussian", "gabor")


@dataclass
class ModelConfig:
    channels: int = 32
    res_blocks: int = 4
    attn_dim: int = 32
    neighborhood: int = 3
    gabor_width: int = 16
    omega0: float = 30.0
    s0: float = 10.0
    shuffle: int = 2
    mlp_width: int = 32
    encoding: str = "gabor"
    multiscale: bool = True
    query_chunk: int = 4096

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise ConfigError(f"encoding must be one of {ENCODINGS}, got {self.encoding!r}")
        if self.neighborhood != 3:
            raise ConfigError("only a 3x3 attention neighbourhood is supported")
        for name in ("channels", "attn_dim", "gabor_width", "shuffle", "mlp_width", "query_chunk"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.res_blocks < 0:
            raise ConfigError("res_blocks must be >= 0")

    @property
    def uses_omega(self) -> bool:
        return self.encoding in ("gabor", "sinusoid")

    @property
    def uses_spread(self) -> bool:
        return self.encoding in ("gabor", "gaussian")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})
