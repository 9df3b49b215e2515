"""Central finite-difference gradient checking (64-bit)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, backward


def numerical_grad(fn: Callable[..., Tensor], inputs: Sequence[Tensor], index: int,
                   weights: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d/dx_index of sum(weights * fn(*inputs)) by central differences."""
    x = inputs[index].data
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        plus = float(np.sum(weights * fn(*inputs).data))
        flat[i] = orig - h
        minus = float(np.sum(weights * fn(*inputs).data))
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * h)
    return out


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              seed: int = 0) -> float:
    """Largest relative error between analytic and numerical gradients.

    The output is contracted with fixed random weights so that every output
    element contributes. Error per input is ``max|analytic - numeric|``
    divided by ``max|numeric|``; the worst input is returned.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ValueError("gradcheck needs float64 inputs")
        t.requires_grad = True
        t.grad = None
    probe = fn(*inputs)
    weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=probe.shape)
    loss = ops.sum(ops.mul(probe, Tensor(weights)))
    backward(loss)
    worst = 0.0
    for i, t in enumerate(inputs):
        numeric = numerical_grad(fn, inputs, i, weights, h)
        analytic = t.grad if t.grad is not None else np.zeros_like(numeric)
        scale = max(float(np.abs(numeric).max()), 1e-12)
        worst = max(worst, float(np.abs(analytic - numeric).max()) / scale)
    return worst
