"""Small parameterised building blocks on top of :mod:`shagcl.numcore`."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .errors import ShapeError


class Linear(nc.Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias_init: float = 0.0):
        limit = np.sqrt(6.0 / (in_dim + out_dim))
        self.weight = nc.Parameter(rng.uniform(-limit, limit, (in_dim, out_dim)))
        self.bias = nc.Parameter(np.full(out_dim, float(bias_init)))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: nc.Tensor) -> nc.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Linear expects width {self.in_dim}, got {x.shape}")
        return nc.add(nc.matmul(x, self.weight), self.bias)


class LayerNorm(nc.Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = nc.Parameter(np.ones(dim))
        self.beta = nc.Parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: nc.Tensor) -> nc.Tensor:
        return nc.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(nc.Module):
    """Lookup table initialised uniformly in ``[-init_range, init_range]``."""

    def __init__(self, num: int, dim: int, rng: np.random.Generator, init_range: float = 0.1):
        self.table = nc.Parameter(rng.uniform(-init_range, init_range, (num, dim)))

    @property
    def num(self) -> int:
        return self.table.shape[0]

    def __call__(self, index) -> nc.Tensor:
        idx = np.asarray(index, dtype=np.intp)
        flat = nc.take_rows(self.table, idx.reshape(-1))
        return nc.reshape(flat, idx.shape + (self.table.shape[1],))
