"""Optional PNG figures for CLI outputs.

Only the command line uses this module, and only with ``--plot``. Every
function reads plain arrays (the same numbers written to CSV) and saves one
file with the non-interactive Agg backend.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.5),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.bbox": "tight",
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def learning_curve(steps, mean_returns, path, title=""):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, mean_returns, marker="o", ms=3)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("mean evaluation return")
        ax.set_title(title)
        return _save(fig, path)


def psd(frequencies, power, beta, slope, path):
    """Log-log periodogram with the ideal ``f**-beta`` line for reference."""
    f = np.asarray(frequencies)
    p = np.asarray(power)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.loglog(f, p, lw=1, label=f"estimate (slope {slope:.3f})")
        ref = p[len(p) // 8] * (f / f[len(f) // 8]) ** (-beta)
        ax.loglog(f, ref, "k--", lw=1, label=f"f^-{beta:g}")
        ax.set_xlabel("frequency")
        ax.set_ylabel("power")
        ax.legend(frameon=False)
        return _save(fig, path)


def random_walks(walks: dict, path):
    """``walks`` maps beta to a ``(T, 2)`` position array."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(walks), figsize=(2.6 * len(walks), 2.8), squeeze=False)
        for ax, (beta, xy) in zip(axes[0], walks.items()):
            ax.plot(xy[:, 0], xy[:, 1], lw=0.7)
            ax.plot(*xy[0], "ko", ms=3)
            ax.set_title(f"beta = {beta:g}")
            ax.set_aspect("equal", adjustable="datalim")
        return _save(fig, path)


def bias_spread(betas, stds, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(betas, stds, marker="o")
        ax.set_xlabel("beta")
        ax.set_ylabel("std of sequence mean")
        return _save(fig, path)


def rank_grid(betas, n_envs, ranks, path, title="rank (1 = best)"):
    """Heatmap of ranks, betas on rows and environment counts on columns."""
    ranks = np.asarray(ranks, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        im = ax.imshow(ranks, cmap="viridis_r", aspect="auto", origin="lower")
        ax.set_xticks(range(len(n_envs)), [str(n) for n in n_envs])
        ax.set_yticks(range(len(betas)), [f"{b:g}" for b in betas])
        ax.set_xlabel("parallel environments")
        ax.set_ylabel("beta")
        ax.grid(False)
        for i in range(ranks.shape[0]):
            for j in range(ranks.shape[1]):
                if np.isfinite(ranks[i, j]):
                    ax.text(j, i, f"{ranks[i, j]:.0f}", ha="center", va="center", color="w", fontsize=7)
        fig.colorbar(im, ax=ax)
        ax.set_title(title)
        return _save(fig, path)
