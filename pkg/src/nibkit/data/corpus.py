"""Deterministic synthetic grayscale corpora with a controlled flat-pixel fraction."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .images import decode_pnm, encode_pgm

PALETTE = ("constant_patches", "axis_gradients", "random_polygons", "soft_blobs")
MANIFEST_HEADER = ("path", "split", "flat_fraction", "mean_gray")


@dataclass(frozen=True)
class CorpusSpec:
    count: int = 64
    size: int = 64
    flat_fraction_target: float = 0.9
    shape_palette: Tuple[str, ...] = PALETTE
    split: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"corpus count must be >= 2, got {self.count}")
        if self.size < 8 or self.size % 8:
            raise ValueError(f"corpus size must be a positive multiple of 8, got {self.size}")
        if not 0.0 <= self.flat_fraction_target <= 1.0:
            raise ValueError("flat_fraction_target must be in [0, 1]")
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must be in (0, 1)")
        unknown = set(self.shape_palette) - set(PALETTE)
        if unknown or not self.shape_palette:
            raise ValueError(f"palette entries must come from {PALETTE}, got {self.shape_palette}")


def flat_mask(u8: np.ndarray) -> np.ndarray:
    """Pixels whose 3x3 neighbourhood (edge-replicated) spans less than one 8-bit level."""
    p = np.pad(u8.astype(np.int16), 1, mode="edge")
    h, w = u8.shape
    stack = np.stack([p[i : i + h, j : j + w] for i in range(3) for j in range(3)])
    return (stack.max(axis=0) - stack.min(axis=0)) < 1


def flat_fraction(u8: np.ndarray) -> float:
    return float(flat_mask(u8).mean())


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _convex_polygon(rng: np.random.Generator, n: int, scale: float) -> np.ndarray:
    cy, cx = rng.uniform(0, n, size=2)
    k = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radii = rng.uniform(0.3, 1.0, size=k) * scale * n / 2
    ys, xs = np.mgrid[0:n, 0:n] + 0.5
    vy, vx = cy + radii * np.sin(angles), cx + radii * np.cos(angles)
    inside = np.ones((n, n), dtype=bool)
    # counter-clockwise vertices: inside is left of every edge
    for i in range(k):
        ax, ay, bx, by = vx[i], vy[i], vx[(i + 1) % k], vy[(i + 1) % k]
        inside &= (bx - ax) * (ys - ay) - (by - ay) * (xs - ax) >= 0
    return inside


def _rect(rng: np.random.Generator, n: int, scale: float) -> Tuple[slice, slice]:
    hh = max(3, int(rng.uniform(0.3, 1.0) * scale * n))
    ww = max(3, int(rng.uniform(0.3, 1.0) * scale * n))
    y0 = int(rng.integers(0, max(1, n - hh + 1)))
    x0 = int(rng.integers(0, max(1, n - ww + 1)))
    return slice(y0, y0 + hh), slice(x0, x0 + ww)


def _add_component(img: np.ndarray, kind: str, rng: np.random.Generator, scale: float) -> np.ndarray:
    n = img.shape[0]
    out = img.copy()
    gray = rng.uniform(0.05, 0.95)
    if kind == "constant_patches":
        out[_rect(rng, n, scale)] = gray
    elif kind == "random_polygons":
        out[_convex_polygon(rng, n, scale)] = gray
    elif kind == "axis_gradients":
        sy, sx = _rect(rng, n, scale)
        hh, ww = sy.stop - sy.start, sx.stop - sx.start
        lo = rng.uniform(0.0, 0.5)
        hi = lo + rng.uniform(0.3, 0.5)
        if rng.random() < 0.5:
            ramp = np.linspace(lo, hi, ww)[None, :].repeat(hh, 0)
        else:
            ramp = np.linspace(lo, hi, hh)[:, None].repeat(ww, 1)
        out[sy, sx] = ramp
    else:
        cy, cx = rng.uniform(0, n, size=2)
        sigma = rng.uniform(1.5, 5.0) * max(scale, 0.25)
        amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.15, 0.4)
        ys, xs = np.mgrid[0:n, 0:n]
        out = out + amp * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma**2))
    return out


def _generate_image(spec: CorpusSpec, index: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, index])
    n = spec.size
    target = spec.flat_fraction_target
    img = np.full((n, n), rng.uniform(0.1, 0.9))
    ff = 1.0
    scale = 1.0
    for _ in range(80):
        if ff <= target + 0.02:
            break
        kind = spec.shape_palette[int(rng.integers(len(spec.shape_palette)))]
        cand = _add_component(img, kind, rng, scale)
        cff = flat_fraction(_quantize(cand))
        if cff >= target - 0.03:
            img, ff = cand, cff
        else:
            scale = max(scale * 0.7, 0.05)
    return _quantize(img)


@dataclass
class Corpus:
    spec: Optional[CorpusSpec]
    images: np.ndarray  # (count, 1, size, size) float32 in [0, 1]
    splits: List[str]
    flat_fractions: List[float]
    mean_grays: List[float]
    names: List[str] = field(default_factory=list)

    def _select(self, which: str) -> np.ndarray:
        idx = [i for i, s in enumerate(self.splits) if s == which]
        return self.images[idx]

    def train(self) -> np.ndarray:
        return self._select("train")

    def val(self) -> np.ndarray:
        return self._select("val")

    def manifest_rows(self) -> List[Tuple[str, str, str, str]]:
        return [
            (name, split, f"{ff:.6f}", f"{mg:.6f}")
            for name, split, ff, mg in zip(self.names, self.splits, self.flat_fractions, self.mean_grays)
        ]

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        for name, img in zip(self.names, self.images):
            with open(os.path.join(out_dir, name), "wb") as fh:
                fh.write(encode_pgm(_quantize(img[0])))
        write_manifest(os.path.join(out_dir, "manifest.csv"), self.manifest_rows())


def write_manifest(path: str, rows: Sequence[Sequence[str]]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)


def gen_corpus(spec: CorpusSpec, out_dir: Optional[str] = None) -> Corpus:
    """Generate (and optionally write) a corpus; deterministic in ``spec``."""
    u8 = [_generate_image(spec, i) for i in range(spec.count)]
    ffs = [flat_fraction(a) for a in u8]
    mean_ff = float(np.mean(ffs))
    if abs(mean_ff - spec.flat_fraction_target) > 0.05:
        raise ValueError(
            f"flat fraction target {spec.flat_fraction_target} unreachable with palette {spec.shape_palette}: "
            f"generated mean {mean_ff:.3f}"
        )
    n_train = int(round(spec.count * spec.split))
    n_train = min(max(n_train, 1), spec.count - 1)
    order = np.random.default_rng([spec.seed, 0x5B1D]).permutation(spec.count)
    splits = ["val"] * spec.count
    for i in order[:n_train]:
        splits[int(i)] = "train"
    corpus = Corpus(
        spec=spec,
        images=np.stack([a[None].astype(np.float32) / 255.0 for a in u8]),
        splits=splits,
        flat_fractions=ffs,
        mean_grays=[float(a.mean() / 255.0) for a in u8],
        names=[f"img_{i:04d}.pgm" for i in range(spec.count)],
    )
    if out_dir is not None:
        corpus.write(out_dir)
    return corpus


def load_corpus(directory: str) -> Corpus:
    """Load a corpus written by :func:`gen_corpus` from its manifest."""
    path = os.path.join(directory, "manifest.csv")
    with open(path, newline="", encoding="ascii") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
    images, splits, ffs, mgs, names = [], [], [], [], []
    for name, split, ff, mg in rows[1:]:
        with open(os.path.join(directory, name), "rb") as fh:
            images.append(decode_pnm(fh.read())[None].astype(np.float32))
        names.append(name)
        splits.append(split)
        ffs.append(float(ff))
        mgs.append(float(mg))
    if not images:
        raise ValueError(f"{path}: corpus is empty")
    return Corpus(None, np.stack(images), splits, ffs, mgs, names)
