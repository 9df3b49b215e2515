"""``nibkit`` command-line entry point."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import plotting
from .autodiff.tensor import Tensor
from .config import ConfigError, RunConfig, load_config, unknown_key_message, valid_keys
from .data.checkpoint import CheckpointError, load_checkpoint
from .data.corpus import Corpus, gen_corpus, load_corpus
from .data.images import ImageFormatError, read_image, write_image
from .flatlab.probe import constant_probe, probe_size
from .flatlab.studies import (
    CONTAMINATION_HEADER,
    HIDING_HEADER,
    NOISE_STUDY_VARIANTS,
    hiding_rows,
    run_contamination_study,
    run_data_hiding_toy,
    run_noise_mode_study,
    write_rows_csv,
    write_study_csv,
)
from .halftone.classical import bayer_dither, floyd_steinberg
from .halftone.losses import build_lowfreq_mask, lowfreq_energy_share
from .halftone.metrics import SSIM_WINDOW, ssim, tone_psnr
from .halftone.train import TrainingDiverged, dither, train_halftoner
from .models import build_model

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# flag aliases per subcommand -> documented config key
ALIASES: Dict[str, Dict[str, str]] = {
    "gen-corpus": {"count": "corpus.count", "size": "corpus.size", "seed": "corpus.seed",
                   "flat-fraction": "corpus.flat_fraction"},
    "train": {"steps": "train.steps", "batch": "train.batch", "lr": "train.lr", "seed": "train.seed",
              "arch": "arch", "nib": "nib.enabled"},
    "dither": {},
    "probe": {"arch": "arch", "nib": "nib.enabled", "seed": "train.seed"},
    "study": {"steps": "train.steps", "batch": "train.batch", "lr": "train.lr"},
    "eval": {},
}


def _build_parser() -> _Parser:
    p = _Parser(prog="nibkit", description="Flatness-degradation analysis and neural dithering.", allow_abbrev=False)
    sub = p.add_subparsers(dest="command")
    sub.required = True

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--out", help="output directory (out.dir)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")

    sp = sub.add_parser("gen-corpus", allow_abbrev=False, help="generate a synthetic corpus and manifest")
    common(sp)
    sp = sub.add_parser("train", allow_abbrev=False, help="train a halftoning network")
    common(sp)
    sp.add_argument("--corpus", help="corpus directory (default: generate from corpus.* keys)")
    sp = sub.add_parser("dither", allow_abbrev=False, help="halftone an image with a checkpoint")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--baseline", choices=("fs", "bayer"))
    sp.add_argument("--format", choices=("pbm", "png"), default="pbm")
    sp = sub.add_parser("probe", allow_abbrev=False, help="constant-input flatness probe")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--gray", type=float, default=0.5)
    sp.add_argument("--size", type=int)
    sp = sub.add_parser("study", allow_abbrev=False, help="noise-mode, contamination and data-hiding studies")
    common(sp)
    sp.add_argument("--kind", choices=("noise-mode", "contamination", "data-hiding", "all"), default="all")
    sp.add_argument("--corpus")
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--variants", default=",".join(NOISE_STUDY_VARIANTS))
    sp = sub.add_parser("eval", allow_abbrev=False, help="tone PSNR / SSIM table for a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=("train", "val"), default="val")
    sp.add_argument("--corpus")
    return p


def _key_flags(command: str, extra: Sequence[str]) -> List[Tuple[str, str]]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into config overrides."""
    aliases = ALIASES[command]
    pairs, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        name, eq, value = tok[2:].partition("=")
        if not eq:
            if i + 1 >= len(extra):
                raise UsageError(f"flag --{name} needs a value")
            value = extra[i + 1]
            i += 1
        i += 1
        key = aliases.get(name, name)
        if key not in valid_keys():
            flags = ", ".join(f"--{a}" for a in aliases)
            raise UsageError(unknown_key_message(name) + (f"; subcommand flags: {flags}" if flags else ""))
        pairs.append((key, value))
    return pairs


def _settings(args, extra: Sequence[str]) -> RunConfig:
    pairs = []
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        pairs.append((key.strip(), value.strip()))
    pairs += _key_flags(args.command, extra)
    if args.out:
        pairs.append(("out.dir", args.out))
    try:
        rc = load_config(args.config, pairs)
        # validate every typed view before doing any work
        rc.model_config(), rc.loss_config(), rc.corpus_spec(), rc.budget()
    except (ConfigError, ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    return rc


def _corpus(rc: RunConfig, directory: Optional[str]) -> Corpus:
    return load_corpus(directory) if directory else gen_corpus(rc.corpus_spec())


def _out(rc: RunConfig, name: str) -> str:
    return os.path.join(str(rc["out.dir"]), name)


# --------------------------------------------------------------------------- subcommands


def cmd_gen_corpus(rc: RunConfig, args) -> None:
    corpus = gen_corpus(rc.corpus_spec(), str(rc["out.dir"]))
    print(f"wrote {len(corpus.names)} images to {rc['out.dir']} "
          f"(mean flat fraction {np.mean(corpus.flat_fractions):.4f})")


def cmd_train(rc: RunConfig, args) -> None:
    corpus = _corpus(rc, args.corpus)
    steps = rc["train.steps"]
    result = train_halftoner(rc.model_config(), rc.loss_config(), corpus, steps, rc["train.batch"],
                             rc["train.seed"], lr=rc["train.lr"], val_every=max(1, steps // 10),
                             log_path=_out(rc, "metrics.csv"), checkpoint_path=_out(rc, "model.ckpt"))
    plotting.training_curves(result.log, _out(rc, "training_curves.png"))
    last = result.log[-1]
    print(f"trained {steps} steps: val_psnr={last['val_psnr']:.3f} val_ssim={last['val_ssim']:.4f}; "
          f"checkpoint {_out(rc, 'model.ckpt')}")


METRIC_HEADER = ("image", "method", "tone_psnr", "ssim", "lowfreq_share", "mean", "flatness_degraded")


def _metric_row(stem: str, method: str, binary: Tensor, gray: Tensor, rc: RunConfig, degraded: bool):
    mask = build_lowfreq_mask(*gray.shape[2:], rc["loss.mask_fraction"])
    s = ssim(binary, gray) if min(gray.shape[2:]) >= SSIM_WINDOW else float("nan")
    return (stem, method, tone_psnr(binary, gray, rc.loss_config()), s, lowfreq_energy_share(binary, mask),
            float(binary.data.mean()), "true" if degraded else "false")


def cmd_dither(rc: RunConfig, args) -> None:
    gray = read_image(args.input)
    if gray.shape[1] != 1:
        gray = Tensor(gray.data.mean(axis=1, keepdims=True))
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build()
    res = dither(model, gray, rc.loss_config())
    stem = os.path.splitext(os.path.basename(args.input))[0]
    os.makedirs(str(rc["out.dir"]), exist_ok=True)
    write_image(_out(rc, f"{stem}_halftone.{args.format}"), res.binary)
    rows = [_metric_row(stem, "model", res.binary, gray, rc, res.flatness_degraded)]
    panel = {"model": res.binary}
    if args.baseline:
        base = floyd_steinberg(gray) if args.baseline == "fs" else bayer_dither(gray, 2)
        write_image(_out(rc, f"{stem}_{args.baseline}.{args.format}"), base)
        rows.append(_metric_row(stem, args.baseline, base, gray, rc, False))
        panel[args.baseline] = base
    write_rows_csv(_out(rc, "dither_metrics.csv"), METRIC_HEADER, rows)
    plotting.halftone_panel(gray, panel, _out(rc, f"{stem}_panel.png"))
    for row in rows:
        print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in zip(METRIC_HEADER, row)))


def cmd_probe(rc: RunConfig, args) -> None:
    model = load_checkpoint(args.checkpoint).build() if args.checkpoint else build_model(rc.model_config())
    size = args.size or probe_size(model)
    report = constant_probe(model, args.gray, size)
    report.write(str(rc["out.dir"]), "probe")
    plotting.probe_maps(report, _out(rc, "probe.png"))
    for r in report.records:
        print(f"layer {r.index:2d} {r.name:<18s} std={r.max_std:.3e} {r.verdict}")
    print("all layers flat" if report.all_flat else f"first non-flat layer: "
          f"{next(r.name for r in report.records if not r.flat)}")


def cmd_study(rc: RunConfig, args) -> None:
    corpus = _corpus(rc, args.corpus)
    budget = rc.budget()
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from None
    os.makedirs(str(rc["out.dir"]), exist_ok=True)
    model_cfg = rc.model_config()
    noise = rc.noise_spec() or rc.override([("nib.enabled", "true")]).noise_spec()
    if args.kind in ("noise-mode", "all"):
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        results = run_noise_mode_study(variants, corpus, budget, seeds, rc.loss_config(),
                                       model_cfg.with_nib(None))
        write_study_csv(_out(rc, "noise_mode.csv"), results)
        plotting.study_bars(results, _out(rc, "noise_mode.png"))
        for r in results:
            print(f"noise-mode {r.label:<14s} {r.mean:.3f} +- {r.std:.3f} dB")
    if args.kind in ("contamination", "all"):
        res = run_contamination_study(corpus, budget, seeds[0], noise, rc["base_width"])
        write_rows_csv(_out(rc, "contamination.csv"), CONTAMINATION_HEADER, res.rows())
        plotting.value_bars(res.rows(), _out(rc, "contamination.png"), "reconstruction PSNR (dB)")
        for name, value in res.rows():
            print(f"contamination {name:<18s} {value:.3f} dB")
    if args.kind in ("data-hiding", "all"):
        arms = run_data_hiding_toy(corpus, budget, seeds[0], noise)
        write_rows_csv(_out(rc, "data_hiding.csv"), HIDING_HEADER, hiding_rows(arms))
        plotting.value_bars([(a.label + " flat/textured", a.ratio) for a in arms], _out(rc, "data_hiding.png"),
                            "recovery MSE ratio")
        for a in arms:
            print(f"data-hiding {a.label:<8s} flat={a.flat_mse:.5f} textured={a.textured_mse:.5f} "
                  f"ratio={a.ratio:.2f} carrier_dev={a.carrier_dev:.4f}")


def cmd_eval(rc: RunConfig, args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build()
    corpus = _corpus(rc, args.corpus)
    idx = [i for i, s in enumerate(corpus.splits) if s == args.split]
    names = corpus.names or [f"img_{i:04d}" for i in range(len(corpus.images))]
    cfg = rc.loss_config()
    rows = []
    for n, i in enumerate(idx):
        res = dither(model, Tensor(corpus.images[i : i + 1]), cfg, sample_id=n)
        rows.append((names[i], res.metrics["tone_psnr"], res.metrics["ssim"]))
    rows.append(("mean", float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows]))))
    os.makedirs(str(rc["out.dir"]), exist_ok=True)
    write_rows_csv(_out(rc, f"eval_{args.split}.csv"), ("image", "tone_psnr", "ssim"), rows)
    for name, p, s in rows:
        print(f"{name:<16s} {p:8.3f} {s:8.4f}")


COMMANDS = {"gen-corpus": cmd_gen_corpus, "train": cmd_train, "dither": cmd_dither, "probe": cmd_probe,
            "study": cmd_study, "eval": cmd_eval}


def _fail(code: str, detail: str) -> None:
    print(f"error: {code}: {' '.join(str(detail).split())}", file=sys.stderr)


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, extra = _build_parser().parse_known_args(argv)
        rc = _settings(args, extra)
        rc.dump()
        COMMANDS[args.command](rc, args)
    except UsageError as exc:
        _fail("usage", exc)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        _fail("diverged", exc)
        return EXIT_RUNTIME
    except ImageFormatError as exc:
        _fail("format", exc)
        return EXIT_RUNTIME
    except CheckpointError as exc:
        _fail("checkpoint", exc)
        return EXIT_RUNTIME
    except OSError as exc:
        _fail("io", f"{exc.strerror or exc}: {exc.filename}" if exc.filename else exc)
        return EXIT_RUNTIME
    except (ValueError, RuntimeError) as exc:
        _fail("runtime", exc)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
