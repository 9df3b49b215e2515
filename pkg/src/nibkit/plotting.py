"""Report figures rendered off-screen to image files."""

from __future__ import annotations

from typing import Dict, Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure


def _save(fig: Figure, path) -> str:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    return str(path)


def _img(x) -> np.ndarray:
    a = np.asarray(getattr(x, "data", x), dtype=np.float64)
    while a.ndim > 2:
        a = a[0]
    return a


def training_curves(log: Sequence[Mapping], path) -> str:
    steps = np.array([r["step"] for r in log])
    fig = Figure(figsize=(9, 3.2))
    ax1, ax2 = fig.subplots(1, 2)
    for key in ("tone_loss", "bin_loss", "blue_loss", "total"):
        ax1.plot(steps, [r[key] for r in log], label=key, lw=1)
    ax1.set_yscale("log")
    ax1.set_xlabel("step")
    ax1.legend(fontsize=7)
    val = [(r["step"], r["val_psnr"]) for r in log if r.get("val_psnr") not in (None, "")]
    if val:
        ax2.plot(*zip(*val), marker="o")
    ax2.set_xlabel("step")
    ax2.set_ylabel("val tone PSNR (dB)")
    return _save(fig, path)


def probe_maps(report, path, max_layers: int = 8) -> str:
    recs = report.records
    pick = recs if len(recs) <= max_layers else [recs[i] for i in np.linspace(0, len(recs) - 1, max_layers).astype(int)]
    fig = Figure(figsize=(2.0 * len(pick), 4.4))
    axes = fig.subplots(2, 1, gridspec_kw={"height_ratios": [1.2, 1]})
    top = axes[0]
    top.set_axis_off()
    sub = top.get_subplotspec().subgridspec(1, len(pick))
    for i, r in enumerate(pick):
        ax = fig.add_subplot(sub[0, i])
        ax.imshow(r.dump, cmap="viridis", vmin=0, vmax=1)
        ax.set_title(f"{r.name}\n{r.verdict}", fontsize=7)
        ax.set_xticks([])
        ax.set_yticks([])
    stds = [max(r.max_std, 1e-12) for r in recs]
    axes[1].semilogy(range(len(recs)), stds, marker=".")
    axes[1].axhline(1e-5, color="r", ls="--", lw=1)
    axes[1].set_xlabel("layer")
    axes[1].set_ylabel("interior std")
    return _save(fig, path)


def study_bars(results, path, ylabel: str = "val tone PSNR (dB)") -> str:
    fig = Figure(figsize=(1.0 + 0.9 * len(results), 3.4))
    ax = fig.subplots()
    labels = [r.label for r in results]
    ax.bar(labels, [r.mean for r in results], yerr=[r.std for r in results], capsize=3, color="tab:blue")
    lo = min(r.mean - r.std for r in results)
    ax.set_ylim(max(0.0, lo - 2.0), None)
    ax.set_ylabel(ylabel)
    ax.tick_params(axis="x", labelrotation=45, labelsize=8)
    return _save(fig, path)


def value_bars(rows: Sequence[Sequence], path, ylabel: str) -> str:
    fig = Figure(figsize=(1.5 + 1.2 * len(rows), 3.2))
    ax = fig.subplots()
    ax.bar([str(r[0]) for r in rows], [float(r[1]) for r in rows], color="tab:gray")
    ax.set_ylabel(ylabel)
    ax.tick_params(axis="x", labelsize=8)
    return _save(fig, path)


def halftone_panel(gray, halftones: Dict[str, object], path) -> str:
    n = 1 + len(halftones)
    fig = Figure(figsize=(2.4 * n, 2.7))
    axes = np.atleast_1d(fig.subplots(1, n))
    for ax, (title, img) in zip(axes, [("input", gray)] + list(halftones.items())):
        ax.imshow(_img(img), cmap="gray", vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(title, fontsize=8)
        ax.set_axis_off()
    return _save(fig, path)
