"""
IrwGAN Plots
Static PNG renderings of the CSV outputs: weight histograms and per-epoch curves.
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import Histogram  # noqa: E402

logger = logging.getLogger(__name__)


def plot_histogram(hist: Histogram, path: Path, title: str = "") -> None:
    """Bar chart of one weight histogram, stacked aligned/unaligned when labeled"""
    lows = hist.edges[:-1]
    width = hist.edges[1] - hist.edges[0]
    fig, ax = plt.subplots(figsize=(6, 4))
    if hist.counts_aligned is not None:
        ax.bar(lows, hist.counts_aligned, width=width, align="edge", color="tab:green", label="aligned")
        ax.bar(lows, hist.counts_unaligned, width=width, align="edge", bottom=hist.counts_aligned,
               color="tab:red", label="unaligned")
        ax.legend()
    else:
        ax.bar(lows, hist.counts, width=width, align="edge", color="tab:blue")
    ax.set_xlabel("importance weight")
    ax.set_ylabel("samples")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_curves(rows: List[Dict[str, float]], x_key: str, y_keys: Sequence[str], path: Path, title: str = "") -> None:
    """One line per column in y_keys against x_key"""
    xs = [row[x_key] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in y_keys:
        ax.plot(xs, [row[key] for row in rows], marker="o", label=key)
    ax.set_xlabel(x_key)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.debug(f"[Plots] Wrote {path}")
