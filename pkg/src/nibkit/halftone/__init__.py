"""Neural dithering: losses, metrics, classical oracles and training."""

from .classical import bayer_dither, bayer_matrix, floyd_steinberg
from .losses import (
    HalftoneLossConfig,
    binarization_penalty,
    blue_noise_loss,
    build_lowfreq_mask,
    lowfreq_energy_share,
    tone_loss,
)
from .metrics import psnr, ssim, tone_psnr
from .train import HalftoneResult, TrainingDiverged, TrainResult, dither, evaluate, train_halftoner
