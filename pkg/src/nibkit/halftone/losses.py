"""Halftoning objectives: blurred-tone MSE, binarization penalty, masked-DCT blue-noise term."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from ..autodiff import ops
from ..autodiff.tensor import Tensor


@dataclass(frozen=True)
class HalftoneLossConfig:
    blur_sigma: float = 2.0
    blur_ksize: int = 11
    w_tone: float = 1.0
    w_bin: float = 0.1
    w_blue: float = 0.05
    mask_fraction: float = 0.05
    constant_patch_ratio: float = 0.25

    def __post_init__(self):
        if self.blur_sigma <= 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        if self.blur_ksize < 1 or self.blur_ksize % 2 == 0:
            raise ValueError(f"blur_ksize must be a positive odd count, got {self.blur_ksize}")
        for name in ("w_tone", "w_bin", "w_blue"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 < self.mask_fraction < 1.0:
            raise ValueError(f"mask_fraction must be in (0, 1), got {self.mask_fraction}")
        if not 0.0 <= self.constant_patch_ratio < 1.0:
            raise ValueError(f"constant_patch_ratio must be in [0, 1), got {self.constant_patch_ratio}")

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def tone_loss(soft: Tensor, gray: Tensor, cfg: HalftoneLossConfig = HalftoneLossConfig()) -> Tensor:
    _same_shape(soft, gray, "tone_loss")
    blur = lambda t: ops.gaussian_blur(t, cfg.blur_sigma, cfg.blur_ksize)  # noqa: E731
    return ops.mse_loss(blur(soft), blur(gray))


def binarization_penalty(soft: Tensor) -> Tensor:
    # ties at 0.5 send the gradient through the `soft` branch
    return ops.mean(ops.minimum(soft, ops.affine(soft, -1.0, 1.0)))


@lru_cache(maxsize=32)
def _mask_array(h: int, w: int, fraction: float) -> np.ndarray:
    u, v = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    radius = np.sqrt((u / h) ** 2 + (v / w) ** 2).ravel()
    # lexsort: last key is primary
    order = np.lexsort((v.ravel(), u.ravel(), radius))
    count = math.ceil(round(fraction * h * w, 9))
    mask = np.ones(h * w)
    mask[order[:count]] = 0.0
    mask = mask.reshape(h, w)
    mask.setflags(write=False)
    return mask


def build_lowfreq_mask(h: int, w: int, fraction: float = 0.05) -> Tensor:
    """1 everywhere except the ``ceil(fraction*h*w)`` lowest radial frequencies."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    return Tensor(_mask_array(h, w, float(fraction))[None, None].astype(np.float32))


def blue_noise_loss(soft: Tensor, mask: Tensor) -> Tensor:
    """Mean absolute masked DCT coefficient (L1 normalised by pixel count)."""
    if soft.shape[2:] != mask.shape[2:]:
        raise ValueError(f"blue_noise_loss: mask {mask.shape[2:]} does not match image {soft.shape[2:]}")
    return ops.mean(ops.absolute(ops.mul(ops.dct2(soft), mask)))


def lowfreq_energy_share(halftone, mask) -> float:
    """sum|DCT(H) * (1 - M)| / sum|DCT(H)| over all images and channels."""
    h = halftone.data if isinstance(halftone, Tensor) else np.asarray(halftone)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    h = np.asarray(h, dtype=np.float64)
    ch, cw = ops.dct_matrix(h.shape[-2]), ops.dct_matrix(h.shape[-1])
    coeffs = np.abs(ch @ h @ cw.T)
    total = coeffs.sum()
    return float((coeffs * (1.0 - m)).sum() / total) if total > 0 else 0.0
