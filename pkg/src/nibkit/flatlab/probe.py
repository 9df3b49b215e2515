"""Constant-input probing of per-layer feature flatness."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..autodiff.tensor import Tensor, no_grad
from ..data.images import write_image
from ..models import Model, StackLayer, build_stack, extents, receptive_field

FLAT_THRESHOLD = 1e-5
PROBE_HEADER = ("layer", "name", "extent", "margin", "max_std", "verdict")


@dataclass
class LayerRecord:
    index: int
    name: str
    extent: int
    margin: int  # in input pixels
    channel_std: np.ndarray
    dump: np.ndarray  # first channel, rescaled to [0, 1]

    @property
    def max_std(self) -> float:
        return float(self.channel_std.max()) if self.channel_std.size else 0.0

    @property
    def flat(self) -> bool:
        return self.max_std < FLAT_THRESHOLD

    @property
    def verdict(self) -> str:
        return "flat" if self.flat else "non-flat"


@dataclass
class ProbeReport:
    gray_level: float
    size: int
    records: List[LayerRecord] = field(default_factory=list)

    @property
    def all_flat(self) -> bool:
        return all(r.flat for r in self.records)

    def record(self, name: str) -> LayerRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def rows(self):
        return [(r.index, r.name, r.extent, r.margin, repr(r.max_std), r.verdict) for r in self.records]

    def write(self, out_dir: str, prefix: str = "probe", dumps: bool = True) -> str:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"{prefix}.csv")
        with open(path, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PROBE_HEADER)
            w.writerows(self.rows())
        if dumps:
            for r in self.records:
                write_image(os.path.join(out_dir, f"{prefix}_{r.index:02d}_{r.name}.pgm"), r.dump)
        return path


def rescale(feature: np.ndarray) -> np.ndarray:
    """Linear (x - min) / (max - min); a constant map becomes 0.5."""
    lo, hi = float(feature.min()), float(feature.max())
    if hi == lo:
        return np.full(feature.shape, 0.5)
    return (feature - lo) / (hi - lo)


def constant_probe(model: Model, gray_level: float, size: int, sample_id: int = 0) -> ProbeReport:
    """Feed a constant image and measure each layer's spatial std away from padding effects."""
    rf = receptive_field(model)[0]
    if size < rf:
        raise ValueError(f"probe size {size} is smaller than the receptive field {rf}")
    channels = model.config.in_channels if model.config is not None else model.params[
        next(iter(model.params))].shape[1]
    x = Tensor(np.full((1, channels, size, size), gray_level, dtype=np.float32))
    record: list = []
    with no_grad():
        model.forward(x, sample_id, record)
    margins = _feature_margins(model)
    report = ProbeReport(float(gray_level), size)
    for i, (name, y) in enumerate(record):
        r, j, m_feat = margins.get(name, (rf,) + margins[model.layers[-1].name][1:])
        data = y.data[0]
        interior = data[:, m_feat : data.shape[1] - m_feat, m_feat : data.shape[2] - m_feat]
        std = interior.std(axis=(1, 2)) if interior.size else np.zeros(data.shape[0])
        margin_px = int(math.ceil(m_feat * j))
        report.records.append(LayerRecord(i, name, r, margin_px, std, rescale(data[0])))
    return report


def _feature_margins(model: Model) -> Dict[str, Tuple[int, float, int]]:
    """Per layer: (receptive extent, jump, width of the border band touched by zero padding)."""
    out = {}
    m = 0
    for layer, (r, j) in zip(model.layers, extents(model.layers)):
        if layer.upsample:
            m *= 2
        else:
            m = -(-(m + (layer.kernel - 1) // 2) // layer.stride)
        out[layer.name] = (r, j, m)
    return out


def random_stack(rng: np.random.Generator, max_layers: int = 8) -> List[StackLayer]:
    """A random NIB-free stack of convs (k in 1/3/5, some strided), activations and upsamples."""
    layers: List[StackLayer] = []
    for _ in range(int(rng.integers(2, max_layers + 1))):
        kind = rng.choice(["conv", "conv", "act", "up"])
        if kind == "conv":
            layers.append(StackLayer("conv", int(rng.integers(1, 9)), int(rng.choice([1, 3, 5])),
                                     int(rng.choice([1, 1, 2]))))
        elif kind == "act":
            layers.append(StackLayer(str(rng.choice(["relu", "leaky_relu", "sigmoid", "tanh"]))))
        else:
            layers.append(StackLayer("up"))
    if not any(l.kind == "conv" for l in layers):
        layers.insert(0, StackLayer("conv", 4, 3))
    return layers


def probe_size(model: Model, slack: int = 16) -> int:
    rf = receptive_field(model)[0]
    return int(8 * math.ceil((rf + slack) / 8))


def random_stacks(count: int = 50, seed: int = 0) -> List[Model]:
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        out.append(build_stack(random_stack(rng), in_channels=1, seed=int(rng.integers(2**31))))
    return out


def layer_extent_check(model: Model, report: Optional[ProbeReport] = None) -> bool:
    """Every record's margin covers half of its receptive extent and never exceeds the full field."""
    report = report or constant_probe(model, 0.5, probe_size(model))
    rf = receptive_field(model)[0]
    return all(r.margin >= (r.extent - 1) / 2 and r.extent <= rf for r in report.records)
