"""SGD and Adam over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .tensor import Tensor

ADAM_LR = 2e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}; expected 'sgd' or 'adam'")


def sgd(lr: float) -> OptimizerState:
    return OptimizerState(kind="sgd", lr=lr)


def adam(lr: float = ADAM_LR) -> OptimizerState:
    return OptimizerState(kind="adam", lr=lr)


def optimizer_step(state: OptimizerState, params: Mapping[str, Tensor]) -> None:
    """Apply one update in place using each parameter's ``.grad``."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"optimizer_step: no gradient for {', '.join(missing)}")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if state.kind == "sgd":
            p.data -= (state.lr * g).astype(p.dtype, copy=False)
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"optimizer_step: moment shape {m.shape} != parameter {name} {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)


def zero_grad(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
