"""Tape-recorded 4-D tensors and the reverse-mode driver."""

from __future__ import annotations

import contextlib
import contextvars
from typing import Any, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, evaluation)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def grad_enabled() -> bool:
    return _grad_enabled.get()


class Function:
    """One recorded operation on the tape.

    Subclasses implement ``forward`` on raw arrays and ``backward`` which maps
    the output gradient to one gradient (or ``None``) per input tensor.
    Anything needed later is stashed on ``self``.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        track = grad_enabled() and any(t.requires_grad for t in inputs)
        return Tensor(out, requires_grad=track, _ctx=fn if track else None)


class Tensor:
    """Dense (n, c, h, w) array that may take part in a recorded computation."""

    __array_priority__ = 100

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Any = None,
        _ctx: Optional[Function] = None,
    ):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim != 4:
            raise ValueError(f"tensors are 4-D (n, c, h, w); got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._ctx = _ctx

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the real work lives in ops
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.affine(self, -1.0, 0.0)


def as_tensor(x: Any, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1, 1)
    return Tensor(arr, dtype=dtype)


def _topological_order(root: Tensor) -> list:
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor."""
    if loss.shape != (1, 1, 1, 1):
        raise ValueError(f"backward needs a scalar loss of shape (1, 1, 1, 1), got {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad=True")

    grads: dict = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        ctx = node._ctx
        if ctx is None:
            continue
        for parent, pg in zip(ctx.inputs, ctx.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise RuntimeError(
                    f"{type(ctx).__name__}.backward produced {pg.shape} for input {parent.shape}"
                )
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
