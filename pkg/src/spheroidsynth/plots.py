"""SVG report figures: feature histograms and the energy trace.

Output is deterministic: a fixed hash salt keeps element ids stable and the
date stamp is stripped, so rerunning a job rewrites identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .morphology import FEATURE_NAMES, FeatureTable, wasserstein_1d

_SVG_OPTS = {"format": "svg", "metadata": {"Date": None}}


def _deterministic_rc():
    return matplotlib.rc_context({"svg.hashsalt": "spheroidsynth"})


def feature_histograms_svg(start: FeatureTable, end: FeatureTable, path) -> None:
    """Seven panels of start-vs-end feature distributions.

    Each panel overlays the two histograms on a shared binning and states
    the 1D Wasserstein distance between the distributions in its title.
    """
    path = Path(path)
    with _deterministic_rc():
        fig, axes = plt.subplots(2, 4, figsize=(14, 6.5))
        for ax, name in zip(axes.ravel(), FEATURE_NAMES):
            a = start.column(name)
            b = end.column(name)
            lo = min(a.min(), b.min()) if len(a) and len(b) else 0.0
            hi = max(a.max(), b.max()) if len(a) and len(b) else 1.0
            if hi <= lo:
                hi = lo + 1.0
            bins = np.linspace(lo, hi, 21)
            ax.hist(a, bins=bins, alpha=0.6, label="start", color="#1f77b4")
            ax.hist(b, bins=bins, alpha=0.6, label="end", color="#ff7f0e")
            w = wasserstein_1d(a, b) if len(a) and len(b) else float("nan")
            ax.set_title(f"{name}\nW = {w:.4g}", fontsize=9)
            ax.tick_params(labelsize=7)
        axes.ravel()[-1].axis("off")
        axes.ravel()[0].legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, **_SVG_OPTS)
        plt.close(fig)


def energy_trace_svg(trace, path) -> None:
    """Total configuration energy against Monte Carlo step."""
    path = Path(path)
    trace = np.asarray(list(trace), dtype=np.float64)
    with _deterministic_rc():
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(np.arange(trace.size), trace, lw=1.2, color="#1f77b4")
        ax.set_xlabel("Monte Carlo step")
        ax.set_ylabel("energy")
        fig.tight_layout()
        fig.savefig(path, **_SVG_OPTS)
        plt.close(fig)
