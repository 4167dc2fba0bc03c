"""Finite-difference checks for taped operations."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _evaluate(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> float:
    return float(fn(*[Tensor(a) for a in arrays]).data)


def analytic_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        loss = fn(*leaves)
    grads = T.backward(tape, loss, leaves)
    return [grads[t] for t in leaves]


def directional_error(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], rng: np.random.Generator,
                      n_dirs: int = 2, eps: float = 1e-6, floor: float = 1e-8) -> float:
    """Largest relative error between ``<grad, d>`` and a central difference along ``d``.

    ``fn`` maps tensors to a scalar tensor; ``arrays`` are float64 inputs.
    Directions are standard normal over every input at once.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    grads = analytic_gradients(fn, arrays)
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(a.shape) for a in arrays]
        ana = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        plus = _evaluate(fn, [a + eps * d for a, d in zip(arrays, dirs)])
        minus = _evaluate(fn, [a - eps * d for a, d in zip(arrays, dirs)])
        num = (plus - minus) / (2 * eps)
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst


def coordinate_error(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], eps: float = 1e-6,
                     floor: float = 1e-8) -> float:
    """Relative error (in the max norm) of the full gradient against per-entry central differences."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    grads = analytic_gradients(fn, arrays)
    worst = 0.0
    for k, a in enumerate(arrays):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            saved = a[idx]
            a[idx] = saved + eps
            plus = _evaluate(fn, arrays)
            a[idx] = saved - eps
            minus = _evaluate(fn, arrays)
            a[idx] = saved
            num[idx] = (plus - minus) / (2 * eps)
        scale = max(np.abs(num).max(initial=0.0), np.abs(grads[k]).max(initial=0.0), floor)
        worst = max(worst, float(np.abs(num - grads[k]).max(initial=0.0)) / scale)
    return worst
