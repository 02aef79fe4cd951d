"""Render report figures from a finished experiment.

Consumes a :class:`~gpmle.harness.McReport` and writes PNG files next to
the delimited output: one trend panel per plot-data series, plus a
standardized-score histogram against the standard normal density for the
replicated experiments.  Rendering never touches the CSV/JSON payloads,
so the delimited reports stay byte-reproducible with figures on or off.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import McReport

DPI = 150


def _style_axes(ax, xlabel: str, ylabel: str, title: str) -> None:
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)


def _series_figure(name: str, xs, ys, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    loglog = any(tag in name for tag in ("lambda", "var", "rmse", "err"))
    if loglog and all(y > 0 for y in ys):
        ax.loglog(xs, ys, "o-")
    else:
        ax.plot(xs, ys, "o-")
        if name.startswith("coverage"):
            ax.axhline(0.95, color="gray", linestyle="--", linewidth=1, label="nominal 0.95")
            ax.set_ylim(0.0, 1.05)
            ax.legend()
    _style_axes(ax, "n", name.replace("_vs_n", "").replace("_", " "), name)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def _zscore_figure(report: McReport, path: Path) -> None:
    n_last = report.config.n_list[-1]
    z1 = [r["z1"] for r in report.records if r["n"] == n_last and r["status"] == "ok"]
    z2 = [r["z2"] for r in report.records if r["n"] == n_last and r["status"] == "ok"]
    if not z1:
        return
    grid = np.linspace(-4, 4, 400)
    pdf = np.exp(-grid * grid / 2.0) / math.sqrt(2.0 * math.pi)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, z, label in zip(axes, (z1, z2), ("z1", "z2")):
        ax.hist(z, bins=30, density=True, alpha=0.6, color="tab:blue")
        ax.plot(grid, pdf, "k-", linewidth=1.5, label="N(0, 1)")
        _style_axes(ax, label, "density", f"{label} at n={n_last}")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_figures(report: McReport, out_dir, force: bool = False) -> list[Path]:
    """Write one PNG per series plus a z-score histogram when records exist."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for name, (xs, ys) in sorted(report.series.items()):
        if not xs:
            continue
        path = out / f"fig_{name}.png"
        if path.exists() and not force:
            raise FileExistsError(f"refusing to overwrite {path}; pass force=True (--force) to allow")
        _series_figure(name, xs, ys, path)
        written.append(path)

    if report.records:
        path = out / "fig_zscores.png"
        if path.exists() and not force:
            raise FileExistsError(f"refusing to overwrite {path}; pass force=True (--force) to allow")
        _zscore_figure(report, path)
        if path.exists():
            written.append(path)
    return written
