"""Differentiable operators.

Every operator here is checked against central finite differences in the
test-suite, so each ``backward`` is the exact adjoint of its ``forward``.
"""

from __future__ import annotations

import functools
from typing import Optional, Sequence, Union

import numpy as np

from .tensor import Function, Tensor, as_tensor

Scalar = Union[int, float]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------- elementwise


class _Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, g):
        a, b = self.inputs
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


class _Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, g):
        a, b = self.inputs
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


class _Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, g):
        a, b = self.inputs
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "add")
    return _Add.apply(a, b)


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "sub")
    return _Sub.apply(a, b)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a if isinstance(a, Tensor) else None)
    _check_broadcast(a, b, "mul")
    return _Mul.apply(a, b)


class _Affine(Function):
    def forward(self, x, scale, shift):
        self.scale = scale
        return (x * scale + shift).astype(x.dtype, copy=False)

    def backward(self, g):
        return (g * self.scale,)


def affine(x: Tensor, scale: Scalar, shift: Scalar = 0.0) -> Tensor:
    """``scale * x + shift`` with python scalars."""
    return _Affine.apply(x, scale=scale, shift=shift)


class _Relu(Function):
    def forward(self, x, slope):
        self.slope = slope
        self.mask = x > 0
        if slope == 0.0:
            return np.where(self.mask, x, 0).astype(x.dtype, copy=False)
        return np.where(self.mask, x, x * slope).astype(x.dtype, copy=False)

    def backward(self, g):
        return (np.where(self.mask, g, g * self.slope).astype(g.dtype, copy=False),)


def relu(x: Tensor) -> Tensor:
    return _Relu.apply(x, slope=0.0)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return _Relu.apply(x, slope=slope)


class _Sigmoid(Function):
    def forward(self, x):
        self.y = (0.5 * (1.0 + np.tanh(0.5 * x))).astype(x.dtype, copy=False)
        return self.y

    def backward(self, g):
        return (g * self.y * (1.0 - self.y),)


def sigmoid(x: Tensor) -> Tensor:
    return _Sigmoid.apply(x)


class _Tanh(Function):
    def forward(self, x):
        self.y = np.tanh(x)
        return self.y

    def backward(self, g):
        return (g * (1.0 - self.y * self.y),)


def tanh(x: Tensor) -> Tensor:
    return _Tanh.apply(x)


class _Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, g):
        return (g * self.sign,)


def absolute(x: Tensor) -> Tensor:
    return _Abs.apply(x)


class _Minimum(Function):
    # ties resolve to the first argument
    def forward(self, a, b):
        self.pick_a = a <= b
        return np.where(self.pick_a, a, b)

    def backward(self, g):
        a, b = self.inputs
        zero = np.zeros_like(g)
        return (
            _unbroadcast(np.where(self.pick_a, g, zero), a.shape),
            _unbroadcast(np.where(self.pick_a, zero, g), b.shape),
        )


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; at exact ties the gradient flows to ``a``."""
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "minimum")
    return _Minimum.apply(a, b)


# --------------------------------------------------------------------------- reductions


class _Sum(Function):
    def forward(self, x):
        return np.asarray(x.sum(dtype=x.dtype)).reshape(1, 1, 1, 1)

    def backward(self, g):
        (x,) = self.inputs
        return (np.broadcast_to(g, x.shape).copy(),)


class _Mean(Function):
    def forward(self, x):
        self.count = x.size
        return np.asarray(x.mean(dtype=x.dtype)).reshape(1, 1, 1, 1)

    def backward(self, g):
        (x,) = self.inputs
        return (np.full(x.shape, g.reshape(-1)[0] / self.count, dtype=x.dtype),)


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _Sum.apply(x)


def mean(x: Tensor) -> Tensor:
    return _Mean.apply(x)


def mse_loss(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mse_loss: shape mismatch {a.shape} vs {b.shape}")
    d = sub(a, b)
    return mean(mul(d, d))


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"l1_loss: shape mismatch {a.shape} vs {b.shape}")
    return mean(absolute(sub(a, b)))


# --------------------------------------------------------------------------- structure


class _Concat(Function):
    def forward(self, *arrays):
        self.splits = np.cumsum([a.shape[1] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=1)

    def backward(self, g):
        return tuple(np.split(g, self.splits, axis=1))


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis."""
    first = tensors[0]
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (first.shape[0], first.shape[2], first.shape[3]):
            raise ValueError(f"concat: {t.shape} incompatible with {first.shape} outside channels")
    return _Concat.apply(*tensors)


class _Take(Function):
    def forward(self, x, index):
        self.index = index
        return x[index]

    def backward(self, g):
        (x,) = self.inputs
        out = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(out, self.index, g)
        return (out,)


def take(x: Tensor, index: Sequence[int]) -> Tensor:
    """Select batch members."""
    return _Take.apply(x, index=np.asarray(index, dtype=np.intp))


class _Upsample2x(Function):
    def forward(self, x):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour upsampling by 2 in both spatial axes."""
    return _Upsample2x.apply(x)


# --------------------------------------------------------------------------- convolution


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


class _Conv2d(Function):
    def forward(self, x, w, b=None, stride=1, padding=0):
        n, c, h, wd = x.shape
        o, _, k, _ = w.shape
        self.stride, self.padding, self.k = stride, padding, k
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.padded_shape = xp.shape
        ho = conv_output_size(h, k, stride, padding)
        wo = conv_output_size(wd, k, stride, padding)
        # column matrix laid out as (c, k, k, n, ho, wo)
        cols = np.empty((c, k, k, n, ho, wo), dtype=xp.dtype)
        xt = xp.transpose(1, 0, 2, 3)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xt[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
        self.cols = cols.reshape(c * k * k, n * ho * wo)
        out = w.reshape(o, -1) @ self.cols
        out = out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3)
        if b is not None:
            out = out + b
        return np.ascontiguousarray(out)

    def backward(self, g):
        x, w = self.inputs[0], self.inputs[1]
        o, c, k, _ = w.shape
        n, _, ho, wo = g.shape
        s, p = self.stride, self.padding
        gm = g.transpose(1, 0, 2, 3).reshape(o, -1)
        gw = (gm @ self.cols.T).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = (w.data.reshape(o, -1).T @ gm).reshape(c, k, k, n, ho, wo)
            gxp = np.zeros(self.padded_shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += gcols[:, i, j].transpose(1, 0, 2, 3)
            h, wd = x.shape[2], x.shape[3]
            gx = gxp[:, :, p : p + h, p : p + wd]
        grads = [gx, gw]
        if len(self.inputs) == 3:
            grads.append(g.sum(axis=(0, 2, 3)).reshape(self.inputs[2].shape))
        return grads


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: Union[int, str] = 0,
) -> Tensor:
    """Cross-correlation with zero padding.

    ``weight`` is (c_out, c_in, k, k) and ``bias`` is (1, c_out, 1, 1).
    ``padding="same"`` pads by (k - 1) / 2 and therefore needs an odd k.
    """
    o, c_in, kh, kw = weight.shape
    if kh != kw:
        raise ValueError(f"conv2d: square kernels only, got {kh}x{kw}")
    if x.shape[1] != c_in:
        raise ValueError(
            f"conv2d: input has {x.shape[1]} channels but weight {weight.shape} expects {c_in} "
            f"(input shape {x.shape})"
        )
    if padding == "same":
        if kh % 2 == 0:
            raise ValueError(f"conv2d: 'same' padding needs an odd kernel, got k={kh}")
        padding = (kh - 1) // 2
    if not isinstance(padding, (int, np.integer)) or padding < 0:
        raise ValueError(f"conv2d: padding must be a non-negative int or 'same', got {padding!r}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    h, w = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    if h < kh or w < kh:
        raise ValueError(f"conv2d: padded input {h}x{w} smaller than kernel {kh}x{kh}")
    if bias is None:
        return _Conv2d.apply(x, weight, stride=stride, padding=int(padding))
    if bias.shape != (1, o, 1, 1):
        raise ValueError(f"conv2d: bias shape {bias.shape}, expected (1, {o}, 1, 1)")
    return _Conv2d.apply(x, weight, bias, stride=stride, padding=int(padding))


# --------------------------------------------------------------------------- fixed linear maps


@functools.lru_cache(maxsize=64)
def dct_matrix(n: int, dtype: str = "float64") -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``C @ x`` the transform of a column."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0, :] = np.sqrt(1.0 / n)
    c = c.astype(dtype)
    c.setflags(write=False)
    return c


def _reflect_index(i: np.ndarray, n: int) -> np.ndarray:
    # half-sample symmetric extension: ... b a | a b c ... c | c b ...
    m = np.mod(i, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def gaussian_kernel1d(sigma: float, ksize: int) -> np.ndarray:
    r = (ksize - 1) // 2
    t = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


@functools.lru_cache(maxsize=64)
def blur_matrix(n: int, sigma: float, ksize: int, dtype: str = "float64") -> np.ndarray:
    """1-D gaussian blur with reflected borders, as an ``n x n`` matrix."""
    g = gaussian_kernel1d(sigma, ksize)
    r = (ksize - 1) // 2
    m = np.zeros((n, n))
    rows = np.arange(n)
    for t, wt in zip(range(-r, r + 1), g):
        np.add.at(m, (rows, _reflect_index(rows + t, n)), wt)
    m = m.astype(dtype)
    m.setflags(write=False)
    return m


class _Separable(Function):
    """``A @ X @ B.T`` applied to every (n, c) plane."""

    def forward(self, x, left, right):
        self.left, self.right = left, right
        return left @ x @ right.T

    def backward(self, g):
        return (self.left.T @ g @ self.right,)


def _separable(x: Tensor, left: np.ndarray, right: np.ndarray) -> Tensor:
    return _Separable.apply(x, left=left.astype(x.dtype), right=right.astype(x.dtype))


def dct2(x: Tensor) -> Tensor:
    """Orthonormal 2-D DCT-II of every channel plane."""
    h, w = x.shape[2], x.shape[3]
    return _separable(x, dct_matrix(h), dct_matrix(w))


def idct2(x: Tensor) -> Tensor:
    h, w = x.shape[2], x.shape[3]
    return _separable(x, dct_matrix(h).T, dct_matrix(w).T)


def gaussian_blur(x: Tensor, sigma: float, ksize: int) -> Tensor:
    """Fixed depthwise gaussian blur with a normalized ``ksize``-tap kernel.

    Borders use half-sample symmetric reflection, under which the blur
    operator is symmetric, so both constants and the global mean are kept.
    """
    if not sigma > 0:
        raise ValueError(f"gaussian_blur: sigma must be > 0, got {sigma}")
    if ksize < 1 or ksize % 2 == 0:
        raise ValueError(f"gaussian_blur: ksize must be a positive odd count, got {ksize}")
    h, w = x.shape[2], x.shape[3]
    return _separable(x, blur_matrix(h, float(sigma), ksize), blur_matrix(w, float(sigma), ksize))
