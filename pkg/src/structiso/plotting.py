"""Optional PNG figures for the monitoring and isolation reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamp or version metadata, so reruns write identical files
_META = {"Software": None}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_monitoring(t2, spe, t2_limit, spe_limit, path, start=None):
    """T^2 and SPE charts against their control limits (log scale)."""
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    idx = np.arange(1, len(t2) + 1)
    for ax, vals, lim, label in ((axes[0], t2, t2_limit, "T$^2$"), (axes[1], spe, spe_limit, "SPE")):
        ax.semilogy(idx, np.maximum(vals, 1e-12), lw=0.8, color="tab:blue")
        ax.axhline(lim, color="tab:red", ls="--", lw=1)
        if start is not None:
            ax.axvline(start + 0.5, color="0.5", lw=0.8)
        ax.set_ylabel(label)
    axes[1].set_xlabel("sample")
    fig.tight_layout()
    return _save(fig, path)


def plot_contributions(names, contributions, active, path, title=None):
    """Bar chart of ``|f|`` per variable with the active set highlighted."""
    fig, ax = plt.subplots(figsize=(max(4, 0.45 * len(names) + 1), 3))
    act = set(active)
    colors = ["tab:red" if j in act else "tab:gray" for j in range(len(names))]
    ax.bar(np.arange(len(names)), contributions, color=colors)
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=90 if len(names) > 20 else 0)
    ax.set_ylabel("|f|")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)
