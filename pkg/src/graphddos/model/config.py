"""Model hyperparameters and their validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

from ..errors import ConfigurationError

DEFAULT_POOL_RATIOS = (0.5, 0.4, 0.32)


@dataclass(frozen=True)
class ModelConfig:
    flow_width: int
    host_width: int = 8
    hidden_dim: int = 64
    heads: int = 4
    depth: int = 3
    pool_ratios: Tuple[float, ...] = DEFAULT_POOL_RATIOS
    dropout_rate: float = 0.3
    pool_noise_std: float = 0.01
    leaky_slope: float = 0.2
    head_dims: Tuple[int, int, int] = (64, 32, 1)
    bottleneck_layers: int = 1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pool_ratios", tuple(self.pool_ratios))
        object.__setattr__(self, "head_dims", tuple(self.head_dims))
        if self.flow_width < 1 or self.host_width < 1:
            raise ConfigurationError("node feature widths must be >= 1")
        if self.hidden_dim < 1 or self.heads < 1:
            raise ConfigurationError("hidden_dim and heads must be >= 1")
        if self.hidden_dim % self.heads != 0:
            raise ConfigurationError(
                f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}"
            )
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        if len(self.pool_ratios) != self.depth:
            raise ConfigurationError(
                f"need one pool ratio per level: {len(self.pool_ratios)} != {self.depth}"
            )
        for r in self.pool_ratios:
            if not 0.0 < r <= 1.0:
                raise ConfigurationError(f"pool ratio {r} outside (0, 1]")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must be in [0, 1)")
        if self.pool_noise_std < 0:
            raise ConfigurationError("pool_noise_std must be >= 0")
        if len(self.head_dims) != 3 or self.head_dims[-1] != 1:
            raise ConfigurationError("head_dims must be three widths ending in 1")
        if any(d < 1 for d in self.head_dims):
            raise ConfigurationError("head_dims must be positive")
        if self.bottleneck_layers < 1:
            raise ConfigurationError("bottleneck_layers must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "flow_width": self.flow_width,
            "host_width": self.host_width,
            "hidden_dim": self.hidden_dim,
            "heads": self.heads,
            "depth": self.depth,
            "pool_ratios": list(self.pool_ratios),
            "dropout_rate": self.dropout_rate,
            "pool_noise_std": self.pool_noise_std,
            "leaky_slope": self.leaky_slope,
            "head_dims": list(self.head_dims),
            "bottleneck_layers": self.bottleneck_layers,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)
