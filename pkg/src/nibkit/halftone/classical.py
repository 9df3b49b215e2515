"""Classical halftoning oracles: Floyd-Steinberg error diffusion and ordered Bayer dithering."""

from __future__ import annotations

import numpy as np

from ..autodiff.tensor import Tensor


def _error_diffuse(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    buf = img.astype(np.float64).copy()
    out = np.zeros((h, w))
    for y in range(h):
        row, below = buf[y], buf[y + 1] if y + 1 < h else None
        for x in range(w):
            v = row[x]
            q = 1.0 if v >= 0.5 else 0.0
            out[y, x] = q
            err = v - q
            if x + 1 < w:
                row[x + 1] += err * (7 / 16)
            if below is not None:
                if x > 0:
                    below[x - 1] += err * (3 / 16)
                below[x] += err * (5 / 16)
                if x + 1 < w:
                    below[x + 1] += err * (1 / 16)
    return out


def floyd_steinberg(gray: Tensor) -> Tensor:
    """Raster-order error diffusion, threshold 0.5, out-of-frame error dropped."""
    g = gray.data
    out = np.empty(g.shape, dtype=g.dtype)
    for n in range(g.shape[0]):
        for c in range(g.shape[1]):
            out[n, c] = _error_diffuse(g[n, c])
    return Tensor(out)


def bayer_matrix(order: int) -> np.ndarray:
    if order < 1:
        raise ValueError(f"bayer order must be >= 1, got {order}")
    m = np.array([[0, 2], [3, 1]])
    for _ in range(order - 1):
        m = np.block([[4 * m, 4 * m + 2], [4 * m + 3, 4 * m + 1]])
    return m


def bayer_dither(gray: Tensor, order: int = 2) -> Tensor:
    """Pixel is on iff gray > (B[i mod n, j mod n] + 0.5) / n^2."""
    if order not in (1, 2, 3):
        raise ValueError(f"bayer order must be 1, 2 or 3, got {order}")
    b = bayer_matrix(order)
    n = b.shape[0]
    h, w = gray.shape[2:]
    thresh = (b[np.arange(h)[:, None] % n, np.arange(w)[None, :] % n] + 0.5) / (n * n)
    return Tensor((gray.data > thresh).astype(gray.dtype))
