"""Figures written next to the CSV/JSON outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

REGION_COLORS = ("#4c72b0", "#dd8452", "#55a868")


def plot_decision_regions(r_bc, n_os, actions, names, path, title=None) -> None:
    m = int(round(np.sqrt(len(actions))))
    grid = np.asarray(actions).reshape(m, m).T  # rows: n_os, cols: r_bc
    fig, ax = plt.subplots(figsize=(4.5, 4))
    cmap = ListedColormap(REGION_COLORS[: len(names)])
    ax.imshow(grid, origin="lower", extent=(0, 1, 0, 1), cmap=cmap, vmin=-0.5, vmax=len(names) - 0.5)
    handles = [plt.Rectangle((0, 0), 1, 1, color=REGION_COLORS[k]) for k in range(len(names))]
    ax.legend(handles, names, loc="upper center", bbox_to_anchor=(0.5, -0.14), ncol=len(names), frameon=False)
    ax.set_xlabel("bad coverage R_BC")
    ax.set_ylabel("overshooting N_OS")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_campaign(report, path) -> None:
    """Mean stopping time (with population std) per sampler and eps, plus T* kl(delta, 1-delta)."""
    cells = report.cells
    samplers = list(dict.fromkeys(c.sampler for c in cells))
    keys = list(dict.fromkeys((c.eps, c.delta) for c in cells))
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(keys) * max(1, len(samplers)) / 2, 3.6))
    width = 0.8 / max(1, len(samplers))
    for j, s in enumerate(samplers):
        means, stds = [], []
        for k in keys:
            c = next((c for c in cells if c.sampler == s and (c.eps, c.delta) == k), None)
            means.append(c.mean_tau if c else np.nan)
            stds.append(c.std_tau if c else np.nan)
        pos = np.arange(len(keys)) + (j - (len(samplers) - 1) / 2) * width
        ax.bar(pos, means, width, yerr=stds, capsize=3, label=s)
    lbs = [next(c.lower_bound for c in cells if (c.eps, c.delta) == k) for k in keys]
    ax.scatter(np.arange(len(keys)), lbs, marker="_", s=400, color="k", zorder=3, label="T* kl(d,1-d)")
    ax.set_xticks(np.arange(len(keys)))
    ax.set_xticklabels([f"eps={e:g}\ndelta={d:g}" for e, d in keys])
    ax.set_ylabel("stopping time")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
