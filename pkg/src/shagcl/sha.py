"""Stacked hybrid-attention encoder.

Each layer holds two hybrid-attention cells, one per modality. A cell pairs a
self-attention unit (queries, keys and values from its own stream) with a
cross-attention unit (keys and values from the other stream). Both streams of
layer ``l`` are computed from the outputs of layer ``l-1``::

    X_l = SA(X_{l-1}) + CA(X_{l-1}, Y_{l-1})
    Y_l = SA(Y_{l-1}) + CA(Y_{l-1}, X_{l-1})

and the stack returns ``X_L + Y_L``. Inputs are ``[..., n, d]``; any leading
axes are independent batch entries (scenes of equal size).
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .errors import ShapeError
from .layers import LayerNorm, Linear


class AttentionUnit(nc.Module):
    """Multi-head attention + feed-forward block, each wrapped in residual and post-norm."""

    def __init__(self, model_dim: int, head_count: int, ffn_dim: int, rng: np.random.Generator):
        if model_dim % head_count:
            raise ShapeError(f"model_dim {model_dim} not divisible by {head_count} heads")
        self.head_count = head_count
        self.model_dim = model_dim
        self.query = Linear(model_dim, model_dim, rng)
        self.key = Linear(model_dim, model_dim, rng)
        self.value = Linear(model_dim, model_dim, rng)
        self.output = Linear(model_dim, model_dim, rng)
        self.norm1 = LayerNorm(model_dim)
        self.ffn_in = Linear(model_dim, ffn_dim, rng)
        self.ffn_out = Linear(ffn_dim, model_dim, rng)
        self.norm2 = LayerNorm(model_dim)
        self.last_weights: np.ndarray | None = None

    def _split(self, t: nc.Tensor) -> nc.Tensor:
        lead, n = t.shape[:-2], t.shape[-2]
        dh = self.model_dim // self.head_count
        t = nc.reshape(t, lead + (n, self.head_count, dh))
        b = len(lead)
        return nc.transpose(t, tuple(range(b)) + (b + 1, b, b + 2))

    def _merge(self, t: nc.Tensor) -> nc.Tensor:
        lead, n = t.shape[:-3], t.shape[-2]
        b = len(lead)
        t = nc.transpose(t, tuple(range(b)) + (b + 1, b, b + 2))
        return nc.reshape(t, lead + (n, self.model_dim))

    def attend(self, x: nc.Tensor, y: nc.Tensor) -> nc.Tensor:
        """Scaled dot-product attention with queries from ``x`` and keys/values from ``y``."""
        for t in (x, y):
            if t.ndim < 2 or t.shape[-1] != self.model_dim:
                raise ShapeError(f"attention input {t.shape} needs last dim {self.model_dim}")
        if x.shape[:-2] != y.shape[:-2]:
            raise ShapeError(f"batch axes differ: {x.shape} vs {y.shape}")
        q = self._split(self.query(x))
        k = self._split(self.key(y))
        v = self._split(self.value(y))
        dh = self.model_dim // self.head_count
        scores = nc.scale(nc.matmul(q, nc.transpose(k)), 1.0 / np.sqrt(dh))
        weights = nc.softmax(scores, axis=-1)
        self.last_weights = weights.data
        return self.output(self._merge(nc.matmul(weights, v)))

    def __call__(self, x: nc.Tensor, y: nc.Tensor | None = None) -> nc.Tensor:
        y = x if y is None else y
        h = self.norm1(nc.add(x, self.attend(x, y)))
        f = self.ffn_out(nc.relu(self.ffn_in(h)))
        return self.norm2(nc.add(h, f))


def self_attention(unit: AttentionUnit, x: nc.Tensor) -> nc.Tensor:
    return unit(x, x)


def cross_attention(unit: AttentionUnit, x: nc.Tensor, y: nc.Tensor) -> nc.Tensor:
    return unit(x, y)


class HybridAttentionCell(nc.Module):
    def __init__(self, model_dim, head_count, ffn_dim, rng):
        self.sa = AttentionUnit(model_dim, head_count, ffn_dim, rng)
        self.ca = AttentionUnit(model_dim, head_count, ffn_dim, rng)

    def __call__(self, own: nc.Tensor, other: nc.Tensor) -> nc.Tensor:
        return nc.add(self.sa(own, own), self.ca(own, other))


class HybridAttentionLayer(nc.Module):
    def __init__(self, model_dim, head_count, ffn_dim, rng):
        self.visual = HybridAttentionCell(model_dim, head_count, ffn_dim, rng)
        self.semantic = HybridAttentionCell(model_dim, head_count, ffn_dim, rng)

    def __call__(self, x: nc.Tensor, y: nc.Tensor) -> tuple[nc.Tensor, nc.Tensor]:
        return self.visual(x, y), self.semantic(y, x)


def ha_layer(layer: HybridAttentionLayer, x: nc.Tensor, y: nc.Tensor):
    return layer(x, y)


class ShaStack(nc.Module):
    def __init__(self, num_layers: int, model_dim: int, head_count: int, ffn_dim: int,
                 rng: np.random.Generator):
        if num_layers < 1:
            raise ValueError("an SHA stack needs at least one layer")
        self.model_dim = model_dim
        self.layers = [HybridAttentionLayer(model_dim, head_count, ffn_dim, rng)
                       for _ in range(num_layers)]

    def __call__(self, x: nc.Tensor, y: nc.Tensor) -> nc.Tensor:
        if x.shape != y.shape:
            raise ShapeError(f"visual {x.shape} and semantic {y.shape} streams must align")
        for layer in self.layers:
            x, y = layer(x, y)
        return nc.add(x, y)


def sha_forward(stack: ShaStack, x0: nc.Tensor, y0: nc.Tensor) -> nc.Tensor:
    return stack(x0, y0)
