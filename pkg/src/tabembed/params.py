"""All learned tensors of the table encoder, in one named registry.

Parameter names are stable strings ("layer0.row.attn.wq", "clf.w", ...);
construction order is fixed, so seeded initialization, Adam state, gradient
checks, and checkpoint serialization all agree on the same ordering.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor, parameter
from .corpus import TruncationLimits
from .embedder import EmbedderConfig, PositionalEmbeddings
from .encoder_config import EncoderConfig

__all__ = ["ModelParams"]

_INIT_STD = 0.02


class ModelParams:
    """Positional tables, CLS vectors, both transformer stacks, classifier."""

    def __init__(
        self,
        encoder: EncoderConfig,
        embedder: EmbedderConfig,
        limits: TruncationLimits = TruncationLimits(),
        seed: int = 0,
        dtype=np.float32,
    ):
        if encoder.hidden_dim != embedder.hidden_dim:
            raise ValueError("encoder and embedder hidden_dim must match")
        self.encoder = encoder
        self.embedder = embedder
        self.limits = limits
        self.dtype = np.dtype(dtype)
        # Grid capacity: one CLS row + optional header row + body rows.
        self.grid_rows = limits.max_rows + 2
        self.grid_cols = limits.max_cols + 1
        self._tensors: dict[str, Tensor] = {}
        self._init(seed)

    # -- construction ----------------------------------------------------
    def _add(self, name: str, data: np.ndarray) -> None:
        self._tensors[name] = parameter(np.ascontiguousarray(data, dtype=self.dtype), name)

    def _init(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        h = self.encoder.hidden_dim
        f = self.encoder.ffn_dim

        def normal(*shape):
            return rng.normal(0.0, _INIT_STD, size=shape)

        self._add("pos_row", normal(self.grid_rows, h))
        self._add("pos_col", normal(self.grid_cols, h))
        for name in ("cls_row", "cls_col", "cls_tab"):
            self._add(name, normal(h))
        for layer in range(self.encoder.layers):
            for axis in ("row", "col"):
                p = f"layer{layer}.{axis}"
                for w in ("wq", "wk", "wv", "wo"):
                    self._add(f"{p}.attn.{w}", normal(h, h))
                for b in ("bq", "bk", "bv", "bo"):
                    self._add(f"{p}.attn.{b}", np.zeros(h))
                self._add(f"{p}.ln1.gain", np.ones(h))
                self._add(f"{p}.ln1.bias", np.zeros(h))
                self._add(f"{p}.ffn.w1", normal(h, f))
                self._add(f"{p}.ffn.b1", np.zeros(f))
                self._add(f"{p}.ffn.w2", normal(f, h))
                self._add(f"{p}.ffn.b2", np.zeros(h))
                self._add(f"{p}.ln2.gain", np.ones(h))
                self._add(f"{p}.ln2.bias", np.zeros(h))
        self._add("clf.w", normal(h))
        self._add("clf.b", np.zeros(()))

    # -- access ------------------------------------------------------------
    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def positional(self) -> PositionalEmbeddings:
        return PositionalEmbeddings(self._tensors["pos_row"], self._tensors["pos_col"])

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        """Replace tensor contents by name; shapes must match exactly."""
        missing = set(self._tensors) - set(arrays)
        extra = set(arrays) - set(self._tensors)
        if missing or extra:
            raise ValueError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in arrays.items():
            t = self._tensors[name]
            if arr.shape != t.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.data.shape}")
            t.data = np.ascontiguousarray(arr, dtype=self.dtype)

    def copy(self) -> "ModelParams":
        dup = ModelParams(self.encoder, self.embedder, self.limits, seed=0, dtype=self.dtype)
        dup.load_state({k: v.copy() for k, v in self.state_arrays().items()})
        return dup

    def astype(self, dtype) -> "ModelParams":
        dup = ModelParams(self.encoder, self.embedder, self.limits, seed=0, dtype=dtype)
        dup.load_state({k: v.astype(dtype) for k, v in self.state_arrays().items()})
        return dup
