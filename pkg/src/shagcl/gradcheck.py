"""Central finite-difference checks for :mod:`shagcl.numcore` graphs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numcore import Tensor, backward, no_grad, zero_grad

# Entries smaller than this are compared in absolute terms: float64 central
# differences with h=1e-6 carry about 1e-10 * |f| of round-off, which swamps a
# relative comparison when the true derivative is (near) zero.
ABS_FLOOR = 1e-4


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: int
    worst_index: tuple
    analytic: list
    numeric: list

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``param``.

    Perturbs ``param.data`` in place and restores it afterwards. The
    evaluations run without graph recording.
    """
    out = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        with no_grad():
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
    return np.abs(analytic - numeric) / denom


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-6, reference: Callable[[], Tensor] | None = None) -> GradCheckResult:
    """Compare backprop through ``fn`` with central differences.

    ``reference`` (default ``fn``) is the function differentiated numerically.
    Pass one when ``fn`` stops gradients on purpose, e.g. a distillation target
    that must be held at its current value.
    """
    zero_grad(params)
    backward(fn())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    zero_grad(params)
    reference = reference or fn
    numeric = [numeric_grad(reference, p, h) for p in params]
    worst, worst_p, worst_idx = 0.0, -1, ()
    for k, (a, n) in enumerate(zip(analytic, numeric)):
        err = relative_error(a, n)
        if err.size and err.max() > worst:
            worst = float(err.max())
            worst_p = k
            worst_idx = np.unravel_index(int(err.argmax()), err.shape)
    return GradCheckResult(worst, worst_p, worst_idx, analytic, numeric)
