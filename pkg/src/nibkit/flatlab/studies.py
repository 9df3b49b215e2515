"""Training studies: noise-mode comparison, autoencoder contamination, data-hiding toy."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..autodiff import ops
from ..autodiff.optim import adam, optimizer_step, zero_grad
from ..autodiff.tensor import Tensor, backward, no_grad
from ..data.corpus import Corpus, flat_mask
from ..halftone.losses import HalftoneLossConfig
from ..halftone.metrics import psnr
from ..halftone.train import TrainResult, _augment, evaluate, train_halftoner
from ..models import Model, ModelConfig, build_model
from ..nib import NoiseSpec, make_noise_map, variant

NOISE_STUDY_VARIANTS = ("S-N-0.3", "D-N-0.3", "S-N-0.03", "S-U-0.3", "D-B-0.5", "F-D-N-0.3", "Regular-grid")
BASELINE_LABEL = "no-NIB"
# the noise-mode comparison trains on tone similarity and binarization only; the blue-noise
# term belongs to the dithering application and is opt-in here
STUDY_LOSS = HalftoneLossConfig(w_blue=0.0)


@dataclass(frozen=True)
class TrainBudget:
    steps: int = 1000
    batch: int = 8
    lr: float = 1e-3
    crop: int = 32


@dataclass
class StudyResult:
    label: str
    mean: float
    std: float
    values: List[float] = field(default_factory=list)

    @classmethod
    def from_values(cls, label: str, values: Sequence[float]) -> "StudyResult":
        if len(values) < 3:
            raise ValueError(f"{label}: a study arm needs at least 3 seeds, got {len(values)}")
        v = np.asarray(values, dtype=np.float64)
        return cls(label, float(v.mean()), float(v.std(ddof=1)), [float(x) for x in v])


def workers_from_env() -> int:
    try:
        return max(1, int(os.environ.get("NIBKIT_THREADS", "1")))
    except ValueError:
        raise ValueError(f"NIBKIT_THREADS must be an integer, got {os.environ['NIBKIT_THREADS']!r}") from None


def _fan_out(fn: Callable, jobs: List[tuple], workers: Optional[int]) -> list:
    workers = workers_from_env() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def train_arm(spec: Optional[NoiseSpec], seed: int, corpus: Corpus, budget: TrainBudget = TrainBudget(),
              loss_cfg: HalftoneLossConfig = STUDY_LOSS, model_cfg: ModelConfig = ModelConfig()) -> TrainResult:
    """Train one study arm: ``model_cfg`` with ``spec`` as its NIB, initialised and sampled from ``seed``."""
    cfg = replace(model_cfg, nib=spec, init_seed=seed)
    return train_halftoner(cfg, loss_cfg, corpus, budget.steps, budget.batch, seed, lr=budget.lr, crop=budget.crop)


def _halftone_arm(spec: Optional[NoiseSpec], seed: int, model_cfg: ModelConfig, loss_cfg: HalftoneLossConfig,
                  corpus: Corpus, budget: TrainBudget) -> float:
    res = train_arm(spec, seed, corpus, budget, loss_cfg, model_cfg)
    return evaluate(res.model, corpus.val(), loss_cfg)["tone_psnr"]


def run_noise_mode_study(
    variants: Iterable,
    corpus: Corpus,
    budget: TrainBudget = TrainBudget(),
    seeds: Sequence[int] = (0, 1, 2),
    loss_cfg: HalftoneLossConfig = STUDY_LOSS,
    model_cfg: ModelConfig = ModelConfig(),
    include_baseline: bool = True,
    workers: Optional[int] = None,
) -> List[StudyResult]:
    """Mean/std validation tone PSNR per noise variant (labels or NoiseSpecs), plus the no-NIB floor."""
    if len(seeds) < 3:
        raise ValueError(f"the noise-mode study needs at least 3 seeds, got {len(seeds)}")
    specs: List[Tuple[str, Optional[NoiseSpec]]] = []
    for v in variants:
        spec = variant(v) if isinstance(v, str) else v
        specs.append((spec.label, spec))
    if include_baseline:
        specs.append((BASELINE_LABEL, None))
    jobs = [(spec, s, model_cfg, loss_cfg, corpus, budget) for _, spec in specs for s in seeds]
    scores = _fan_out(_halftone_arm, jobs, workers)
    out = []
    for i, (label, _) in enumerate(specs):
        out.append(StudyResult.from_values(label, scores[i * len(seeds) : (i + 1) * len(seeds)]))
    return out


def write_study_csv(path, results: Sequence[StudyResult]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label", "mean", "std", "n", "values"))
        for r in results:
            w.writerow((r.label, repr(r.mean), repr(r.std), len(r.values), ";".join(repr(v) for v in r.values)))


# --------------------------------------------------------------------------- contamination


@dataclass
class ContaminationResult:
    ae: float
    ae_noise: float
    ae_nib: float

    def rows(self):
        return [("autoencoder", self.ae), ("autoencoder+noise", self.ae_noise), ("autoencoder+nib", self.ae_nib)]


def _noisy(x: np.ndarray, spec: Optional[NoiseSpec], sample_ids: Sequence[int]) -> np.ndarray:
    if spec is None:
        return x
    maps = [make_noise_map(spec, x.shape[2], x.shape[3], sid, x.shape[1]).data[0] for sid in sample_ids]
    return (x + np.stack(maps)).astype(np.float32)


def _crops(train: np.ndarray, rng: np.random.Generator, batch: int, crop: int, augment: bool = True) -> np.ndarray:
    picks = [train[int(rng.integers(len(train)))] for _ in range(batch)]
    if not augment:
        return np.stack([p[..., :crop, :crop] for p in picks])
    return np.stack([_augment(p, rng, crop) for p in picks])


def train_reconstruction(model_cfg: ModelConfig, train: np.ndarray, budget: TrainBudget, seed: int,
                         input_noise: Optional[NoiseSpec] = None, augment: bool = True) -> Model:
    """Fit model(x [+ noise]) ~ x with MSE and Adam; ``augment`` enables random crops and dihedral flips."""
    model = build_model(model_cfg)
    opt = adam(budget.lr)
    for step in range(1, budget.steps + 1):
        rng = np.random.default_rng([seed, step])
        x = _crops(train, rng, budget.batch, min(budget.crop, train.shape[-1]), augment)
        ids = [(step - 1) * budget.batch + i for i in range(budget.batch)]
        zero_grad(model.params)
        loss = ops.mse_loss(model(Tensor(_noisy(x, input_noise, ids)), sample_id=ids), Tensor(x))
        backward(loss)
        optimizer_step(opt, model.params)
    return model


def reconstruction_psnr(model: Model, images: np.ndarray, input_noise: Optional[NoiseSpec] = None) -> float:
    vals = []
    with no_grad():
        for i, img in enumerate(images):
            x = img[None]
            y = model(Tensor(_noisy(x, input_noise, [10**6 + i])), sample_id=10**6 + i).data
            vals.append(psnr(y, x))
    return float(np.mean(vals))


def run_contamination_study(corpus: Corpus, budget: TrainBudget = TrainBudget(), seed: int = 0,
                            noise: NoiseSpec = NoiseSpec(), base_width: int = 8) -> ContaminationResult:
    """Raw reconstruction PSNR of a plain AE, an AE fed noisy input, and an AE with a NIB head."""
    cfg = ModelConfig(arch="autoencoder", base_width=base_width, init_seed=seed)
    train, val = corpus.train(), corpus.val()
    ae = train_reconstruction(cfg, train, budget, seed)
    ae_noise = train_reconstruction(cfg, train, budget, seed, input_noise=noise)
    ae_nib = train_reconstruction(cfg.with_nib(noise), train, budget, seed)
    return ContaminationResult(
        reconstruction_psnr(ae, val),
        reconstruction_psnr(ae_noise, val, input_noise=noise),
        reconstruction_psnr(ae_nib, val),
    )


# --------------------------------------------------------------------------- data hiding


@dataclass(frozen=True)
class HidingConfig:
    factor: int = 8  # hidden field is (size/factor)^2
    blocks: int = 4
    base_width: int = 8
    amplitude: float = 0.1
    leash: float = 1.0


@dataclass
class HidingArm:
    label: str
    flat_mse: float
    textured_mse: float
    carrier_dev: float

    @property
    def ratio(self) -> float:
        return self.flat_mse / self.textured_mse if self.textured_mse > 0 else float("inf")


def _hidden_field(rng: np.random.Generator, n: int, size: int, factor: int) -> np.ndarray:
    small = rng.random((n, 1, size // factor, size // factor))
    return np.repeat(np.repeat(small, factor, axis=2), factor, axis=3).astype(np.float32)


def _hiding_models(cfg: HidingConfig, nib: Optional[NoiseSpec], seed: int) -> Tuple[Model, Model]:
    enc = build_model(ModelConfig(in_channels=2, base_width=cfg.base_width, num_blocks=cfg.blocks,
                                  output_activation="tanh", nib=nib, init_seed=seed))
    dec = build_model(ModelConfig(base_width=cfg.base_width, num_blocks=cfg.blocks, init_seed=seed + 1))
    return enc, dec


def _hide(enc: Model, dec: Model, gray: Tensor, hidden: Tensor, cfg: HidingConfig, ids) -> Tuple[Tensor, Tensor]:
    carrier = ops.add(gray, ops.affine(enc(ops.concat([gray, hidden]), sample_id=ids), cfg.amplitude))
    return carrier, dec(carrier)


def run_data_hiding_toy(corpus: Corpus, budget: TrainBudget = TrainBudget(), seed: int = 0,
                        noise: NoiseSpec = NoiseSpec(), cfg: HidingConfig = HidingConfig()) -> List[HidingArm]:
    """Hide a coarse scalar field in a near-copy of the gray image; score recovery on flat vs textured pixels."""
    train, val = corpus.train(), corpus.val()
    crop = min(budget.crop, train.shape[-1])
    if crop % cfg.factor or val.shape[-1] % cfg.factor:
        raise ValueError(f"crop and image size must be multiples of the hiding factor {cfg.factor}")
    arms = []
    for label, nib in (("standard", None), ("nib", noise)):
        enc, dec = _hiding_models(cfg, nib, seed)
        params = {**{f"enc.{k}": v for k, v in enc.params.items()}, **{f"dec.{k}": v for k, v in dec.params.items()}}
        opt = adam(budget.lr)
        for step in range(1, budget.steps + 1):
            rng = np.random.default_rng([seed, step])
            gray = Tensor(_crops(train, rng, budget.batch, crop))
            hidden = Tensor(_hidden_field(rng, budget.batch, crop, cfg.factor))
            ids = [(step - 1) * budget.batch + i for i in range(budget.batch)]
            zero_grad(params)
            carrier, rec = _hide(enc, dec, gray, hidden, cfg, ids)
            loss = ops.add(ops.mse_loss(rec, hidden), ops.affine(ops.mse_loss(carrier, gray), cfg.leash))
            backward(loss)
            optimizer_step(opt, params)
        rng = np.random.default_rng([seed, 0xC0FFEE])
        hidden = _hidden_field(rng, len(val), val.shape[-1], cfg.factor)
        flat_err, tex_err, dev = [], [], []
        with no_grad():
            for i in range(len(val)):
                carrier, rec = _hide(enc, dec, Tensor(val[i : i + 1]), Tensor(hidden[i : i + 1]), cfg, 10**6 + i)
                err = (rec.data[0, 0] - hidden[i, 0]) ** 2
                fm = flat_mask(np.round(val[i, 0] * 255).astype(np.uint8))
                flat_err.append(err[fm])
                tex_err.append(err[~fm])
                dev.append(np.abs(carrier.data - val[i : i + 1]).mean())
        fe, te = np.concatenate(flat_err), np.concatenate(tex_err)
        arms.append(HidingArm(label, float(fe.mean()) if fe.size else float("nan"),
                              float(te.mean()) if te.size else float("nan"), float(np.mean(dev))))
    return arms


def write_rows_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def hiding_rows(arms: Sequence[HidingArm]):
    return [(a.label, a.flat_mse, a.textured_mse, a.ratio, a.carrier_dev) for a in arms]


HIDING_HEADER = ("arm", "flat_mse", "textured_mse", "ratio", "carrier_dev")
CONTAMINATION_HEADER = ("arm", "psnr_db")
