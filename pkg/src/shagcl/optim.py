"""Optimisers and the warm-up / step-decay learning-rate schedule."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .numcore import Parameter


class SGD:
    def __init__(self, params: Sequence[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data = p.data - lr * v


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, params, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
    if name == "sgd":
        return SGD(params, lr, momentum, weight_decay)
    if name == "adam":
        return Adam(params, lr, (momentum, 0.999), weight_decay=weight_decay)
    raise ValueError(f"unknown optimizer {name!r}")


def learning_rate(step: int, total: int, base: float, warmup_fraction: float = 0.05,
                  decay_at: Sequence[float] = (0.7, 0.9), decay_factor: float = 0.1,
                  warmup_start: float = 0.1) -> float:
    """Linear warm-up from ``warmup_start * base``, then multiply by ``decay_factor``
    at each fraction of training listed in ``decay_at``."""
    warmup = int(round(warmup_fraction * total))
    if step < warmup:
        alpha = step / warmup
        return base * (warmup_start * (1 - alpha) + alpha)
    drops = sum(step >= int(round(f * total)) for f in decay_at)
    return base * decay_factor ** drops
