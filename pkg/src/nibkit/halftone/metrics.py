"""Tone PSNR (low-pass comparison) and windowed SSIM."""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor
from .losses import HalftoneLossConfig

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _blur(x: np.ndarray, sigma: float, ksize: int) -> np.ndarray:
    bh = ops.blur_matrix(x.shape[-2], sigma, ksize)
    bw = ops.blur_matrix(x.shape[-1], sigma, ksize)
    return bh @ x @ bw.T


def psnr(a, b) -> float:
    mse = float(np.mean((_array(a) - _array(b)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))


def tone_psnr(halftone, gray, cfg: HalftoneLossConfig = HalftoneLossConfig()) -> float:
    """PSNR in dB between the blurred halftone and the blurred grayscale image."""
    h, g = _array(halftone), _array(gray)
    if h.shape != g.shape:
        raise ValueError(f"tone_psnr: shape mismatch {h.shape} vs {g.shape}")
    return psnr(_blur(h, cfg.blur_sigma, cfg.blur_ksize), _blur(g, cfg.blur_sigma, cfg.blur_ksize))


def _valid_filter(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    n = len(k)
    rows = np.lib.stride_tricks.sliding_window_view(x, n, axis=-2) @ k
    return np.lib.stride_tricks.sliding_window_view(rows, n, axis=-1) @ k


def ssim(a, b) -> float:
    """Mean SSIM over 11x11 gaussian windows (sigma 1.5), valid positions only, data range 1."""
    x, y = _array(a), _array(b)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 4:
        if x.shape[1] != 1:
            raise ValueError(f"ssim expects single-channel images, got {x.shape[1]} channels")
        return float(np.mean([ssim(x[i, 0], y[i, 0]) for i in range(x.shape[0])]))
    if x.ndim != 2:
        raise ValueError(f"ssim expects a 2-D image or an (n,1,h,w) batch, got shape {x.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    k = ops.gaussian_kernel1d(SSIM_SIGMA, SSIM_WINDOW)
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mx, my = _valid_filter(x, k), _valid_filter(y, k)
    vx = _valid_filter(x * x, k) - mx * mx
    vy = _valid_filter(y * y, k) - my * my
    cxy = _valid_filter(x * y, k) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(s.mean())
