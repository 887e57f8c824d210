"""Encoder hyperparameters, split out so params and encoder share them."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["EncoderConfig"]


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 64
    layers: int = 2
    heads: int = 2
    ffn_dim: int = 0  # 0 means 4 * hidden_dim
    dropout: float = 0.0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.hidden_dim % self.heads != 0:
            raise ValueError("hidden_dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.ffn_dim == 0:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden_dim)

    def to_json(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "layers": self.layers,
            "heads": self.heads,
            "ffn_dim": self.ffn_dim,
            "dropout": self.dropout,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderConfig":
        return cls(
            hidden_dim=obj["hidden_dim"],
            layers=obj["layers"],
            heads=obj["heads"],
            ffn_dim=obj["ffn_dim"],
            dropout=obj.get("dropout", 0.0),
        )
