"""Figure rendering for the report path.

Overlay plots: Monte Carlo estimate
as a solid black line, closed-form approximation as a dashed red line, tail
probability on a log scale against the threshold.
"""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Stable ids and no timestamp metadata, so emitted SVGs are reproducible.
matplotlib.rcParams["svg.hashsalt"] = "grftail"


def _series(rows, attr):
    vals = np.array([getattr(r, attr) if getattr(r, attr) else np.nan for r in rows], dtype=float)
    vals[vals <= 0] = np.nan  # log scale: gaps instead of -inf
    return vals


def render_overlay(panels, path, ylabel: str = "tail probability"):
    """One panel per domain: approximation (dashed red) vs MC (solid black).

    panels: sequence of (title, rows) where rows provide b, approx, and
    mc_estimate attributes.
    """
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(4.0 * n, 3.2), squeeze=False)
    for ax, (title, rows) in zip(axes[0], panels):
        b = np.array([r.b for r in rows], dtype=float)
        ax.plot(b, _series(rows, "mc_estimate"), "k-", marker="o", markersize=3,
                label="Monte Carlo")
        ax.plot(b, _series(rows, "approx"), "r--", marker="s", markersize=3,
                label="approximation")
        ax.set_yscale("log")
        ax.set_xlabel("b")
        ax.set_title(title, fontsize=10)
    axes[0][0].set_ylabel(ylabel)
    axes[0][0].legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)
    return path
