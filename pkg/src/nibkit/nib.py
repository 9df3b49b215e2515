"""Noise Incentive Block.

A NIB perturbs its input with a spatially varying proxy ``N`` and recombines
two branches ``f1`` and ``f2`` so that the features are non-flat even for a
constant input, while a suitable choice of ``f1``/``f2`` still recovers the
input exactly.

Noise values are a pure function of ``(seed, x, y, sample_id)`` through a
counter-based hash, so a stationary map is the same at every resolution and
never tiles.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor

MODES = ("stationary", "dynamic")
INJECTIONS = ("additive_symmetric", "multiplicative_complementary", "feature_domain")

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@dataclass(frozen=True)
class Gaussian:
    mean: float = 0.0
    sigma: float = 0.3

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"gaussian sigma must be > 0, got {self.sigma}")

    @classmethod
    def from_variance(cls, mean: float, variance: float) -> "Gaussian":
        return cls(mean, float(np.sqrt(variance)))


@dataclass(frozen=True)
class Uniform:
    lo: float = -0.3
    hi: float = 0.3

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"uniform needs lo < hi, got lo={self.lo}, hi={self.hi}")


@dataclass(frozen=True)
class Bernoulli:
    p: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"bernoulli p must be in (0, 1), got {self.p}")


@dataclass(frozen=True)
class RegularGrid:
    period: int = 2

    def __post_init__(self):
        if self.period < 2:
            raise ValueError(f"regular grid period must be >= 2, got {self.period}")


Family = Union[Gaussian, Uniform, Bernoulli, RegularGrid]
FAMILIES = {"gaussian": Gaussian, "uniform": Uniform, "bernoulli": Bernoulli, "regular_grid": RegularGrid}


def family_name(family: Family) -> str:
    for name, cls in FAMILIES.items():
        if isinstance(family, cls):
            return name
    raise TypeError(f"not a noise family: {family!r}")


@dataclass(frozen=True)
class NoiseSpec:
    mode: str = "stationary"
    family: Family = field(default_factory=Gaussian)
    injection: str = "additive_symmetric"
    seed: int = 42
    per_channel: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"noise mode must be one of {MODES}, got {self.mode!r}")
        if self.injection not in INJECTIONS:
            raise ValueError(f"injection must be one of {INJECTIONS}, got {self.injection!r}")
        family_name(self.family)
        if self.injection == "multiplicative_complementary" and not isinstance(self.family, Bernoulli):
            raise ValueError("multiplicative_complementary injection requires a bernoulli family")
        if isinstance(self.family, RegularGrid) and self.mode != "stationary":
            raise ValueError("regular_grid noise is only defined in stationary mode")

    @property
    def label(self) -> str:
        """Short variant label such as ``S-N-0.3`` or ``F-D-N-0.3``."""
        fam = self.family
        if isinstance(fam, RegularGrid):
            return "Regular-grid" if fam.period == 2 else f"Regular-grid-{fam.period}"
        head = "S" if self.mode == "stationary" else "D"
        if isinstance(fam, Gaussian):
            tail = f"N-{fam.sigma:g}"
        elif isinstance(fam, Uniform):
            tail = f"U-{fam.hi:g}" if fam.lo == -fam.hi else f"U-{fam.lo:g}-{fam.hi:g}"
        else:
            tail = f"B-{fam.p:g}"
        prefix = "F-" if self.injection == "feature_domain" else ""
        return f"{prefix}{head}-{tail}"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "family": family_name(self.family),
            "params": asdict(self.family),
            "injection": self.injection,
            "seed": int(self.seed),
            "per_channel": self.per_channel,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        fam = FAMILIES[d["family"]](**d["params"])
        return cls(d["mode"], fam, d["injection"], int(d["seed"]), bool(d.get("per_channel", False)))


def variant(label: str, seed: int = 42) -> NoiseSpec:
    """Parse a variant label (``S-N-0.3``, ``D-B-0.5``, ``F-D-N-0.3``, ``Regular-grid``...)."""
    if label.lower().startswith("regular-grid"):
        rest = label[len("regular-grid"):].lstrip("-")
        return NoiseSpec("stationary", RegularGrid(int(rest) if rest else 2), "additive_symmetric", seed)
    parts = label.upper().split("-")
    injection = "additive_symmetric"
    if parts[0] == "F":
        injection = "feature_domain"
        parts = parts[1:]
    if len(parts) != 3 or parts[0] not in ("S", "D"):
        raise ValueError(f"unrecognized variant label {label!r}")
    mode = "stationary" if parts[0] == "S" else "dynamic"
    value = float(parts[2])
    if parts[1] == "N":
        fam: Family = Gaussian(0.0, value)
    elif parts[1] == "U":
        fam = Uniform(-value, value)
    elif parts[1] == "B":
        fam = Bernoulli(value)
        if injection == "additive_symmetric":
            injection = "multiplicative_complementary"
    else:
        raise ValueError(f"unknown family letter in {label!r}")
    return NoiseSpec(mode, fam, injection, seed)


# --------------------------------------------------------------------------- hashing


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(v) -> np.ndarray:
    return np.asarray(v, dtype=np.int64).astype(np.uint64)


def hash_uniform(seed, x, y, sample_id, stream=0) -> np.ndarray:
    """Uniform (0, 1) doubles hashed from integer coordinates; broadcasts."""
    with np.errstate(over="ignore"):
        h = _mix(_as_u64(seed) + _GOLDEN)
        for part in (x, y, sample_id, stream):
            h = _mix(h ^ (_as_u64(part) + _GOLDEN))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54


def _sample(family: Family, seed, x, y, sample_id, channel=0) -> np.ndarray:
    if isinstance(family, RegularGrid):
        y = np.asarray(y)
        return ((np.mod(y, family.period) >= family.period // 2) * np.ones_like(np.asarray(x))).astype(np.float64)
    stream = 2 * np.asarray(channel)
    u = hash_uniform(seed, x, y, sample_id, stream)
    if isinstance(family, Gaussian):
        u2 = hash_uniform(seed, x, y, sample_id, stream + 1)
        return family.mean + family.sigma * np.sqrt(-2.0 * np.log(u)) * np.cos(2.0 * np.pi * u2)
    if isinstance(family, Uniform):
        return family.lo + (family.hi - family.lo) * u
    return (u < family.p).astype(np.float64)


def noise_value(seed: int, x: int, y: int, sample_id: int = 0, family: Family = Gaussian()) -> float:
    """Noise at pixel column ``x``, row ``y`` for one sample."""
    return float(_sample(family, seed, x, y, sample_id))


def make_noise_map(spec: NoiseSpec, h: int, w: int, sample_id: int = 0, channels: int = 1,
                   dtype=np.float32) -> Tensor:
    """A (1, channels, h, w) noise map. Stationary specs ignore ``sample_id``."""
    if h < 1 or w < 1:
        raise ValueError(f"noise map size must be positive, got {h}x{w}")
    sid = 0 if spec.mode == "stationary" else int(sample_id)
    ys, xs = np.mgrid[0:h, 0:w]
    chans = range(channels) if spec.per_channel else [0] * channels
    planes = [_sample(spec.family, spec.seed, xs, ys, sid, c) for c in chans]
    return Tensor(np.stack(planes)[None].astype(dtype))


def _noise_batch(spec: NoiseSpec, n: int, c: int, h: int, w: int, sample_id, dtype) -> Tensor:
    chans = c if spec.per_channel else 1
    if spec.mode == "stationary":
        nm = make_noise_map(spec, h, w, 0, chans, dtype).data
    else:
        ids = _sample_ids(sample_id, n)
        nm = np.concatenate([make_noise_map(spec, h, w, s, chans, dtype).data for s in ids])
    return Tensor(np.ascontiguousarray(np.broadcast_to(nm, (nm.shape[0], c, h, w))))


def _sample_ids(sample_id, n: int) -> list:
    if isinstance(sample_id, (int, np.integer)):
        return [int(sample_id) + i for i in range(n)]
    ids = [int(s) for s in sample_id]
    if len(ids) != n:
        raise ValueError(f"got {len(ids)} sample ids for a batch of {n}")
    return ids


# --------------------------------------------------------------------------- block


@dataclass
class NibParams:
    f1_weight: Tensor
    f1_bias: Tensor
    f2_weight: Tensor
    f2_bias: Tensor

    def __post_init__(self):
        if self.f1_weight.shape != self.f2_weight.shape or self.f1_bias.shape != self.f2_bias.shape:
            raise ValueError(
                f"f1 and f2 must have identical shapes, got {self.f1_weight.shape}/{self.f2_weight.shape}"
            )

    @property
    def kernel(self) -> int:
        return self.f1_weight.shape[2]

    @property
    def in_channels(self) -> int:
        return self.f1_weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.f1_weight.shape[0]

    @classmethod
    def init(cls, in_channels: int, out_channels: int, kernel: int = 1,
             rng: Optional[np.random.Generator] = None, dtype=np.float32) -> "NibParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_channels * kernel * kernel))
        shape = (out_channels, in_channels, kernel, kernel)

        def weight():
            return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)

        def bias():
            return Tensor(np.zeros((1, out_channels, 1, 1), dtype=dtype), requires_grad=True)

        return cls(weight(), bias(), weight(), bias())

    def named(self, prefix: str = "") -> dict:
        return {
            f"{prefix}f1.weight": self.f1_weight,
            f"{prefix}f1.bias": self.f1_bias,
            f"{prefix}f2.weight": self.f2_weight,
            f"{prefix}f2.bias": self.f2_bias,
        }


def nib_forward(x: Tensor, spec: NoiseSpec, params: NibParams,
                sample_id: Union[int, Sequence[int]] = 0, noise: Optional[Tensor] = None) -> Tensor:
    """Features of ``x`` after the noise incentive block.

    additive_symmetric:          f1(I + N) + f2(I - N)
    multiplicative_complementary: f1(I * B) + f2(I * (1 - B))
    feature_domain:              f1(I) + f2(N)

    With linear branches the symmetric form equals
    ``(W1 + W2) * I + (W1 - W2) * N + b1 + b2``, which is how it is evaluated:
    tied branches then cancel the noise exactly rather than up to rounding.
    An explicit ``noise`` map (broadcastable to ``x``) overrides the map drawn from ``spec``.
    """
    n, c, h, w = x.shape
    if c != params.in_channels:
        raise ValueError(f"NIB expects {params.in_channels} input channels, got {c} (input {x.shape})")
    if noise is None:
        noise = _noise_batch(spec, n, c, h, w, sample_id, x.dtype)
    elif noise.shape[1] != c:
        noise = Tensor(np.ascontiguousarray(np.broadcast_to(noise.data, (noise.shape[0], c, h, w))))
    w1, b1, w2, b2 = params.f1_weight, params.f1_bias, params.f2_weight, params.f2_bias
    if spec.injection == "additive_symmetric":
        signal = ops.conv2d(x, ops.add(w1, w2), ops.add(b1, b2), padding="same")
        return ops.add(signal, ops.conv2d(noise, ops.sub(w1, w2), padding="same"))
    if spec.injection == "multiplicative_complementary":
        on = ops.conv2d(ops.mul(x, noise), w1, b1, padding="same")
        off = ops.conv2d(ops.mul(x, ops.affine(noise, -1.0, 1.0)), w2, b2, padding="same")
        return ops.add(on, off)
    return ops.add(ops.conv2d(x, w1, b1, padding="same"), ops.conv2d(noise, w2, b2, padding="same"))
