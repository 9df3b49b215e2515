"""ResNet, U-Net and autoencoder generators with an optional NIB first block."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor
from .nib import NibParams, NoiseSpec, nib_forward

ARCHS = ("resnet", "unet", "autoencoder")
ACTIVATIONS = ("sigmoid", "tanh", "none")

Record = Optional[List[Tuple[str, Tensor]]]


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "resnet"
    base_width: int = 8
    in_channels: int = 1
    out_channels: int = 1
    output_activation: Optional[str] = None  # None picks the arch default
    init_seed: int = 0
    nib: Optional[NoiseSpec] = None
    nib_kernel: int = 1
    num_blocks: int = 10
    unet_bottleneck_convs: int = 7
    residual_init_scale: float = 0.1

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.base_width < 8:
            raise ValueError(f"base_width must be >= 8, got {self.base_width}")
        if self.output_activation is not None and self.output_activation not in ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {ACTIVATIONS}")
        if self.nib_kernel % 2 == 0:
            raise ValueError(f"nib_kernel must be odd, got {self.nib_kernel}")
        if self.num_blocks < 1 or self.unet_bottleneck_convs < 1:
            raise ValueError("num_blocks and unet_bottleneck_convs must be >= 1")
        if min(self.in_channels, self.out_channels) < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def activation(self) -> str:
        if self.output_activation is not None:
            return self.output_activation
        return "none" if self.arch == "autoencoder" else "sigmoid"

    @property
    def divisor(self) -> int:
        return 1 if self.arch == "resnet" else 8

    def with_nib(self, spec: Optional[NoiseSpec]) -> "ModelConfig":
        return replace(self, nib=spec)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "nib"}
        d["nib"] = self.nib.to_dict() if self.nib is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        nib = d.pop("nib", None)
        return cls(**d, nib=NoiseSpec.from_dict(nib) if nib else None)


@dataclass(frozen=True)
class LayerMeta:
    """Spatial footprint of one layer on the deepest input-to-output path."""

    name: str
    kernel: int = 1
    stride: int = 1
    upsample: bool = False


def extents(layers: Sequence[LayerMeta]) -> List[Tuple[int, float]]:
    """Cumulative (receptive extent, jump) after each layer."""
    r, j = 1.0, 1.0
    out = []
    for layer in layers:
        if layer.upsample:
            j /= 2
        else:
            r += (layer.kernel - 1) * j
            j *= layer.stride
        out.append((int(round(r)), j))
    return out


class Model:
    """A built network: named parameters, layer metadata, forward program."""

    def __init__(self, config: Optional[ModelConfig], params: Dict[str, Tensor], layers: List[LayerMeta],
                 program: Callable[["Model", Tensor, object, Record], Tensor], divisor: int = 1):
        self.config = config
        self.params = params
        self.layers = layers
        self._program = program
        self.divisor = divisor

    @property
    def noise(self) -> Optional[NoiseSpec]:
        return self.config.nib if self.config is not None else None

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def layer_extent(self, name: str) -> Tuple[int, float]:
        for layer, ext in zip(self.layers, extents(self.layers)):
            if layer.name == name:
                return ext
        raise KeyError(name)

    def forward(self, x: Tensor, sample_id: Union[int, Sequence[int]] = 0, record: Record = None) -> Tensor:
        in_ch = self.params[next(iter(self.params))].shape[1] if self.config is None else self.config.in_channels
        if x.shape[1] != in_ch:
            raise ValueError(f"model expects {in_ch} input channels, got {x.shape[1]}")
        h, w = x.shape[2], x.shape[3]
        if h % self.divisor or w % self.divisor:
            raise ValueError(f"input {h}x{w}: height and width must be divisible by {self.divisor}")
        return self._program(self, x, sample_id, record)

    __call__ = forward

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load(self, values: Dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if values[k].shape != p.shape:
                raise ValueError(f"parameter {k}: shape {values[k].shape} != {p.shape}")
            p.data[...] = values[k]


def forward(model: Model, x: Tensor, sample_id: Union[int, Sequence[int]] = 0, record: Record = None) -> Tensor:
    return model.forward(x, sample_id, record)


def receptive_field(model: Model) -> Tuple[int, int]:
    r = extents(model.layers)[-1][0] if model.layers else 1
    return (r, r)


# --------------------------------------------------------------------------- builders


class _Builder:
    def __init__(self, seed: int, dtype=np.float32):
        self.seed = seed
        self.dtype = dtype
        self.params: Dict[str, Tensor] = {}
        self.layers: List[LayerMeta] = []

    def _rng(self, name: str) -> np.random.Generator:
        # one stream per parameter name keeps shared layers identical across variants
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def conv(self, name: str, c_in: int, c_out: int, k: int, stride: int = 1, scale: float = 1.0,
             on_path: bool = True) -> None:
        std = scale * np.sqrt(2.0 / (c_in * k * k))
        w = self._rng(name + ".weight").standard_normal((c_out, c_in, k, k)) * std
        self.params[name + ".weight"] = Tensor(w.astype(self.dtype), requires_grad=True)
        self.params[name + ".bias"] = Tensor(np.zeros((1, c_out, 1, 1), self.dtype), requires_grad=True)
        if on_path:
            self.layers.append(LayerMeta(name, k, stride))

    def head(self, cfg: ModelConfig) -> None:
        if cfg.nib is None:
            self.conv("head", cfg.in_channels, cfg.base_width, 1)
            return
        k = cfg.nib_kernel
        p = NibParams.init(cfg.in_channels, cfg.base_width, k, self._rng("head.nib"), self.dtype)
        self.params.update(p.named("head."))
        self.layers.append(LayerMeta("head", k, 1))

    def up(self, name: str) -> None:
        self.layers.append(LayerMeta(name, upsample=True))


def _conv(model: Model, name: str, x: Tensor, stride: int = 1) -> Tensor:
    p = model.params
    return ops.conv2d(x, p[name + ".weight"], p[name + ".bias"], stride=stride, padding="same")


def _head(model: Model, x: Tensor, sample_id, record: Record) -> Tensor:
    cfg = model.config
    if cfg.nib is None:
        y = _conv(model, "head", x)
    else:
        p = model.params
        nibp = NibParams(p["head.f1.weight"], p["head.f1.bias"], p["head.f2.weight"], p["head.f2.bias"])
        y = nib_forward(x, cfg.nib, nibp, sample_id)
    return _rec(record, "head", y)


def _rec(record: Record, name: str, y: Tensor) -> Tensor:
    if record is not None:
        record.append((name, y))
    return y


def _output(model: Model, y: Tensor, record: Record) -> Tensor:
    y = _conv(model, "tail", y)
    act = model.config.activation
    if act == "sigmoid":
        y = ops.sigmoid(y)
    elif act == "tanh":
        y = ops.tanh(y)
    return _rec(record, "tail", y)


def _resnet_program(model: Model, x: Tensor, sample_id, record: Record) -> Tensor:
    y = _head(model, x, sample_id, record)
    for b in range(model.config.num_blocks):
        t = _rec(record, f"blocks.{b}.conv1", ops.relu(_conv(model, f"blocks.{b}.conv1", y)))
        y = _rec(record, f"blocks.{b}.conv2", ops.add(y, _conv(model, f"blocks.{b}.conv2", t)))
    return _output(model, y, record)


def _unet_widths(w: int) -> List[int]:
    return [w, 2 * w, 4 * w, 4 * w]


def _unet_program(model: Model, x: Tensor, sample_id, record: Record) -> Tensor:
    cfg = model.config
    y = _head(model, x, sample_id, record)
    skips = []
    for lvl in range(3):
        for i in (1, 2):
            y = _rec(record, f"enc{lvl}.conv{i}", ops.relu(_conv(model, f"enc{lvl}.conv{i}", y)))
        skips.append(y)
        y = _rec(record, f"down{lvl}", ops.relu(_conv(model, f"down{lvl}", y, stride=2)))
    for i in range(cfg.unet_bottleneck_convs):
        y = _rec(record, f"mid.{i}", ops.relu(_conv(model, f"mid.{i}", y)))
    for lvl in (2, 1, 0):
        y = _rec(record, f"up{lvl}", ops.concat([ops.upsample2x(y), skips[lvl]]))
        for i in (1, 2):
            y = _rec(record, f"dec{lvl}.conv{i}", ops.relu(_conv(model, f"dec{lvl}.conv{i}", y)))
    return _output(model, y, record)


def _ae_widths(w: int) -> List[int]:
    return [w, 2 * w, 4 * w]


def _autoencoder_program(model: Model, x: Tensor, sample_id, record: Record) -> Tensor:
    y = _head(model, x, sample_id, record)
    for lvl in range(3):
        y = _rec(record, f"enc{lvl}", ops.relu(_conv(model, f"enc{lvl}", y, stride=2)))
    for lvl in (2, 1, 0):
        y = _rec(record, f"up{lvl}", ops.upsample2x(y))
        y = _rec(record, f"dec{lvl}", ops.relu(_conv(model, f"dec{lvl}", y)))
    return _output(model, y, record)


def build_model(config: ModelConfig) -> Model:
    """Build and deterministically initialize the network described by ``config``."""
    cfg = config
    b = _Builder(cfg.init_seed)
    w = cfg.base_width
    b.head(cfg)
    if cfg.arch == "resnet":
        for i in range(cfg.num_blocks):
            b.conv(f"blocks.{i}.conv1", w, w, 3)
            b.conv(f"blocks.{i}.conv2", w, w, 3, scale=cfg.residual_init_scale)
        program = _resnet_program
    elif cfg.arch == "unet":
        ch = _unet_widths(w)
        for lvl in range(3):
            b.conv(f"enc{lvl}.conv1", ch[lvl], ch[lvl], 3)
            b.conv(f"enc{lvl}.conv2", ch[lvl], ch[lvl], 3)
            b.conv(f"down{lvl}", ch[lvl], ch[lvl + 1], 3, stride=2)
        for i in range(cfg.unet_bottleneck_convs):
            b.conv(f"mid.{i}", ch[3], ch[3], 3)
        for lvl in (2, 1, 0):
            b.up(f"up{lvl}")
            b.conv(f"dec{lvl}.conv1", ch[lvl + 1] + ch[lvl], ch[lvl], 3)
            b.conv(f"dec{lvl}.conv2", ch[lvl], ch[lvl], 3)
        program = _unet_program
    else:
        ch = [w] + _ae_widths(w)
        for lvl in range(3):
            b.conv(f"enc{lvl}", ch[lvl], ch[lvl + 1], 3, stride=2)
        for lvl in (2, 1, 0):
            b.up(f"up{lvl}")
            b.conv(f"dec{lvl}", ch[lvl + 1], ch[lvl], 3)
        program = _autoencoder_program
    b.conv("tail", w, cfg.out_channels, 1)
    return Model(cfg, b.params, b.layers, program, cfg.divisor)


# --------------------------------------------------------------------------- generic stacks


@dataclass(frozen=True)
class StackLayer:
    """``conv`` (zero "same" padding), an activation name, or ``up``."""

    kind: str
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1


STACK_ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "relu": ops.relu,
    "leaky_relu": ops.leaky_relu,
    "sigmoid": ops.sigmoid,
    "tanh": ops.tanh,
}


def build_stack(layers: Sequence[StackLayer], in_channels: int = 1, seed: int = 0) -> Model:
    """A plain conv/activation/upsample stack (no NIB), for flatness experiments."""
    b = _Builder(seed)
    c = in_channels
    program_steps = []
    for i, layer in enumerate(layers):
        name = f"layer{i}"
        if layer.kind == "conv":
            b.conv(name, c, layer.out_channels, layer.kernel, layer.stride)
            # biases random so constant levels are shifted, not just scaled
            bias = b._rng(name + ".bias.init").standard_normal((1, layer.out_channels, 1, 1)) * 0.1
            b.params[name + ".bias"].data[...] = bias
            c = layer.out_channels
        elif layer.kind == "up":
            b.up(name)
        elif layer.kind in STACK_ACTIVATIONS:
            b.layers.append(LayerMeta(name))
        else:
            raise ValueError(f"unknown stack layer kind {layer.kind!r}")
        program_steps.append((name, layer))

    def program(model: Model, x: Tensor, sample_id, record: Record) -> Tensor:
        p = model.params
        for name, layer in program_steps:
            if layer.kind == "conv":
                x = ops.conv2d(x, p[name + ".weight"], p[name + ".bias"], layer.stride, "same")
            elif layer.kind == "up":
                x = ops.upsample2x(x)
            else:
                x = STACK_ACTIVATIONS[layer.kind](x)
            x = _rec(record, name, x)
        return x

    model = Model(None, b.params, b.layers, program, 1)
    model.stack = list(layers)
    return model
