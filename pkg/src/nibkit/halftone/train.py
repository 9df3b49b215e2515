"""Training loop for neural halftoners and the inference-time ``dither`` wrapper."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..autodiff import ops
from ..autodiff.optim import OptimizerState, adam, optimizer_step, zero_grad
from ..autodiff.tensor import Tensor, backward, no_grad
from ..data.checkpoint import Checkpoint, save_checkpoint
from ..data.corpus import Corpus
from ..models import Model, ModelConfig, build_model, receptive_field
from .losses import (
    HalftoneLossConfig,
    binarization_penalty,
    blue_noise_loss,
    build_lowfreq_mask,
    lowfreq_energy_share,
    tone_loss,
)
from .metrics import SSIM_WINDOW, ssim, tone_psnr

LOG_HEADER = ("step", "tone_loss", "bin_loss", "blue_loss", "total", "val_psnr", "val_ssim")


class TrainingDiverged(RuntimeError):
    """Raised when the loss goes non-finite; ``checkpoint`` holds the last good parameters."""

    def __init__(self, step: int, checkpoint: Checkpoint):
        super().__init__(f"loss became non-finite at step {step}; last good parameters are from step {checkpoint.step}")
        self.step = step
        self.checkpoint = checkpoint


@dataclass
class HalftoneResult:
    binary: Tensor
    soft: Tensor
    metrics: Dict[str, float]
    flatness_degraded: bool


@dataclass
class TrainResult:
    model: Model
    log: List[dict]
    optimizer: OptimizerState
    steps: int

    def checkpoint(self, extra: Optional[dict] = None) -> Checkpoint:
        return Checkpoint.from_model(self.model, self.optimizer, self.steps, extra)


def _is_flat(x: np.ndarray, margin: int = 0) -> bool:
    h, w = x.shape[2:]
    if margin and 2 * margin < min(h, w):
        x = x[:, :, margin : h - margin, margin : w - margin]
    return bool(np.all(x.max(axis=(2, 3)) == x.min(axis=(2, 3))))


def dither(model: Model, gray: Tensor, cfg: HalftoneLossConfig = HalftoneLossConfig(),
           sample_id: Union[int, Sequence[int]] = 0) -> HalftoneResult:
    """Run the model, threshold at 0.5 and score the halftone against ``gray``."""
    with no_grad():
        soft = model(gray, sample_id)
    binary = Tensor((soft.data >= 0.5).astype(soft.dtype))
    metrics = {
        "tone_psnr": tone_psnr(binary, gray, cfg),
        "ssim": ssim(binary, gray) if min(gray.shape[2:]) >= SSIM_WINDOW and gray.shape[1] == 1 else float("nan"),
        "lowfreq_share": lowfreq_energy_share(binary, build_lowfreq_mask(*gray.shape[2:], cfg.mask_fraction)),
        "mean": float(binary.data.mean()),
    }
    # zero padding perturbs a border band of half the receptive field; judge the interior
    margin = (receptive_field(model)[0] - 1) // 2
    degraded = _is_flat(gray.data) and _is_flat(binary.data, margin)
    return HalftoneResult(binary, soft, metrics, degraded)


def evaluate(model: Model, images: np.ndarray, cfg: HalftoneLossConfig = HalftoneLossConfig()) -> Dict[str, float]:
    """Mean tone PSNR and SSIM over a stack of (n, 1, h, w) images, one forward per image."""
    psnrs, ssims = [], []
    for i, img in enumerate(images):
        res = dither(model, Tensor(img[None]), cfg, sample_id=i)
        psnrs.append(res.metrics["tone_psnr"])
        ssims.append(res.metrics["ssim"])
    return {"tone_psnr": float(np.mean(psnrs)), "ssim": float(np.mean(ssims))}


def _augment(img: np.ndarray, rng: np.random.Generator, crop: int) -> np.ndarray:
    h, w = img.shape[-2:]
    y = int(rng.integers(0, h - crop + 1))
    x = int(rng.integers(0, w - crop + 1))
    patch = img[..., y : y + crop, x : x + crop]
    k = int(rng.integers(0, 8))
    patch = np.rot90(patch, k % 4, axes=(-2, -1))
    if k >= 4:
        patch = patch[..., ::-1]
    return np.ascontiguousarray(patch)


def make_batch(train: np.ndarray, batch: int, crop: int, const_ratio: float, rng: np.random.Generator):
    """Crops of corpus images followed by constant-gray patches; returns (batch, constant indices)."""
    n_const = int(round(batch * const_ratio))
    members = []
    for _ in range(batch - n_const):
        members.append(_augment(train[int(rng.integers(len(train)))], rng, crop))
    for _ in range(n_const):
        members.append(np.full((train.shape[1], crop, crop), rng.uniform(0.1, 0.9), dtype=np.float32))
    return np.stack(members).astype(np.float32), list(range(batch - n_const, batch))


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else repr(float(v))


def train_halftoner(
    model_cfg: ModelConfig,
    loss_cfg: HalftoneLossConfig,
    corpus: Union[Corpus, np.ndarray],
    steps: int,
    batch: int,
    seed: int,
    *,
    lr: float = 2e-4,
    crop: int = 32,
    val_images: Optional[np.ndarray] = None,
    val_every: int = 0,
    log_path=None,
    checkpoint_path=None,
) -> TrainResult:
    """Train a halftoning generator; deterministic in (model_cfg, loss_cfg, corpus, steps, batch, seed)."""
    if isinstance(corpus, Corpus):
        train = corpus.train()
        if val_images is None:
            val_images = corpus.val()
    else:
        train = np.asarray(corpus, dtype=np.float32)
    if len(train) == 0:
        raise ValueError("train_halftoner: corpus has no training images")
    if steps < 1 or batch < 1:
        raise ValueError("train_halftoner: steps and batch must be >= 1")
    crop = min(crop, train.shape[-2], train.shape[-1])
    model = build_model(model_cfg)
    if crop % model.divisor:
        raise ValueError(f"crop {crop} must be divisible by {model.divisor} for arch {model_cfg.arch}")
    opt = adam(lr)
    mask = build_lowfreq_mask(crop, crop, loss_cfg.mask_fraction)
    log: List[dict] = []
    last_good = (model.snapshot(), 0)
    fh = open(log_path, "w", newline="", encoding="ascii") if log_path is not None else None
    writer = csv.writer(fh, lineterminator="\n") if fh is not None else None
    if writer is not None:
        writer.writerow(LOG_HEADER)
    try:
        for step in range(1, steps + 1):
            rng = np.random.default_rng([seed, step])
            xb, const_idx = make_batch(train, batch, crop, loss_cfg.constant_patch_ratio, rng)
            x = Tensor(xb)
            zero_grad(model.params)
            soft = model(x, sample_id=[(step - 1) * batch + i for i in range(batch)])
            lt = tone_loss(soft, x, loss_cfg)
            lb = binarization_penalty(soft)
            terms = [ops.affine(lt, loss_cfg.w_tone), ops.affine(lb, loss_cfg.w_bin)]
            lblue = None
            if const_idx:
                lblue = blue_noise_loss(ops.take(soft, const_idx), mask)
                terms.append(ops.affine(lblue, loss_cfg.w_blue))
            total = terms[0]
            for t in terms[1:]:
                total = ops.add(total, t)
            if not math.isfinite(total.item()):
                params, good_step = last_good
                model.load(params)
                ckpt = Checkpoint.from_model(model, None, good_step)
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, ckpt)
                raise TrainingDiverged(step, ckpt)
            backward(total)
            optimizer_step(opt, model.params)
            last_good = (model.snapshot(), step)
            row = {
                "step": step,
                "tone_loss": lt.item(),
                "bin_loss": lb.item(),
                "blue_loss": lblue.item() if lblue is not None else 0.0,
                "total": total.item(),
                "val_psnr": None,
                "val_ssim": None,
            }
            if val_images is not None and len(val_images) and val_every and (step % val_every == 0 or step == steps):
                ev = evaluate(model, val_images, loss_cfg)
                row["val_psnr"], row["val_ssim"] = ev["tone_psnr"], ev["ssim"]
            log.append(row)
            if writer is not None:
                writer.writerow([step] + [_fmt(row[k]) for k in LOG_HEADER[1:]])
    finally:
        if fh is not None:
            fh.close()
    result = TrainResult(model, log, opt, steps)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, result.checkpoint({"loss": loss_cfg.to_dict()}))
    return result
