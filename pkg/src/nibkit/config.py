"""Flat ``key = value`` run configuration with dotted keys."""

from __future__ import annotations

import os
from typing import Dict, Iterable, Mapping, Optional, Tuple

from .data.corpus import CorpusSpec
from .flatlab.studies import TrainBudget
from .halftone.losses import HalftoneLossConfig
from .models import ModelConfig
from .nib import FAMILIES, Bernoulli, Gaussian, NoiseSpec, RegularGrid, Uniform

DEFAULTS: Dict[str, object] = {
    "arch": "resnet",
    "base_width": 8,
    "nib.enabled": True,
    "nib.mode": "stationary",
    "nib.family": "gaussian",
    "nib.sigma": 0.3,
    "nib.lo": -0.3,
    "nib.hi": 0.3,
    "nib.p": 0.5,
    "nib.period": 2,
    "nib.injection": "additive_symmetric",
    "nib.kernel": 1,
    "nib.seed": 42,
    "loss.blur_sigma": 2.0,
    "loss.w_tone": 1.0,
    "loss.w_bin": 0.1,
    "loss.w_blue": 0.05,
    "loss.mask_fraction": 0.05,
    "loss.const_ratio": 0.25,
    "train.steps": 1000,
    "train.batch": 8,
    "train.lr": 1e-3,
    "train.seed": 0,
    "corpus.count": 64,
    "corpus.size": 64,
    "corpus.flat_fraction": 0.9,
    "corpus.seed": 0,
    "out.dir": "out",
}

CONFIG_FILENAME = "config.txt"


class ConfigError(ValueError):
    """Unknown key or unparsable value."""


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean (true/false/on/off), got {text!r}")


def _coerce(key: str, value) -> object:
    default = DEFAULTS[key]
    if not isinstance(value, str):
        return value
    try:
        if isinstance(default, bool):
            return _parse_bool(value)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return value.strip()


def _format(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def valid_keys() -> Tuple[str, ...]:
    return tuple(DEFAULTS)


def unknown_key_message(key: str) -> str:
    return f"unknown key {key!r}; valid keys: {', '.join(DEFAULTS)}"


class RunConfig(Mapping):
    """Immutable merged settings; every documented key has a default."""

    def __init__(self, values: Optional[Mapping[str, object]] = None):
        merged = dict(DEFAULTS)
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(unknown_key_message(k))
            merged[k] = _coerce(k, v)
        self._values = merged

    def __getitem__(self, key):
        return self._values[key]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def override(self, pairs: Iterable[Tuple[str, object]]) -> "RunConfig":
        values = dict(self._values)
        for k, v in pairs:
            if k not in DEFAULTS:
                raise ConfigError(unknown_key_message(k))
            values[k] = _coerce(k, v)
        return RunConfig(values)

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self._values.items())

    def dump(self, directory: Optional[str] = None) -> str:
        directory = directory or str(self["out.dir"])
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, CONFIG_FILENAME)
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.dumps())
        return path

    # typed views -----------------------------------------------------------

    def noise_spec(self) -> Optional[NoiseSpec]:
        if not self["nib.enabled"]:
            return None
        fam_name = self["nib.family"]
        if fam_name not in FAMILIES:
            raise ConfigError(f"nib.family must be one of {', '.join(FAMILIES)}, got {fam_name!r}")
        family = {
            "gaussian": lambda: Gaussian(0.0, self["nib.sigma"]),
            "uniform": lambda: Uniform(self["nib.lo"], self["nib.hi"]),
            "bernoulli": lambda: Bernoulli(self["nib.p"]),
            "regular_grid": lambda: RegularGrid(self["nib.period"]),
        }[fam_name]()
        return NoiseSpec(self["nib.mode"], family, self["nib.injection"], self["nib.seed"])

    def model_config(self) -> ModelConfig:
        return ModelConfig(arch=self["arch"], base_width=self["base_width"], init_seed=self["train.seed"],
                           nib=self.noise_spec(), nib_kernel=self["nib.kernel"])

    def loss_config(self) -> HalftoneLossConfig:
        return HalftoneLossConfig(blur_sigma=self["loss.blur_sigma"], w_tone=self["loss.w_tone"],
                                  w_bin=self["loss.w_bin"], w_blue=self["loss.w_blue"],
                                  mask_fraction=self["loss.mask_fraction"],
                                  constant_patch_ratio=self["loss.const_ratio"])

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(count=self["corpus.count"], size=self["corpus.size"],
                          flat_fraction_target=self["corpus.flat_fraction"], seed=self["corpus.seed"])

    def budget(self) -> TrainBudget:
        return TrainBudget(steps=self["train.steps"], batch=self["train.batch"], lr=self["train.lr"])


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: {unknown_key_message(key)}")
        out[key] = value
    return out


def load_config(path: Optional[str] = None, overrides: Iterable[Tuple[str, object]] = ()) -> RunConfig:
    values: Dict[str, object] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read(), path))
    return RunConfig(values).override(overrides)
