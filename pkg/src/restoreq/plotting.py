"""Curve plots. Rendering reads curve objects only and never alters them."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_erc(curves, path, title="Error versus reject") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, c in curves.items():
        style = {"color": "black", "linestyle": "--"} if name.upper() == "PERFECT" else {"marker": "."}
        ax.plot(c.fractions, c.fnmr, label=name, **style)
    ax.set_xlabel("Fraction of images rejected")
    ax.set_ylabel("FNMR")
    ax.set_xlim(0, 1)
    ax.set_ylim(bottom=0)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)


def plot_det(curves, path, title="DET") -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, c in curves.items():
        ax.plot(c.fmr, c.fnmr, label=name)
    ax.set_xlabel("FMR")
    ax.set_ylabel("FNMR")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    _save(fig, path)


def _save(fig, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
