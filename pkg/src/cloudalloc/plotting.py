"""PNG figures rendered next to the CLI's CSV/JSON output (headless Agg backend)."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}
COLORS = {"ca": "#c0504d", "optimizer": "#4f81bd"}


def _save(fig, path: str) -> str:
    tmp = path + ".tmp.png"
    fig.savefig(tmp, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    os.replace(tmp, path)
    return path


def cost_comparison(rows: Sequence[dict], path: str) -> str:
    """Grouped bars of hourly cost per scenario; rows carry scenario, ca_cost, optimizer_cost."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        pos = np.arange(len(rows))
        w = 0.38
        ax.bar(pos - w / 2, [r["ca_cost"] for r in rows], w, label="Cluster Autoscaler", color=COLORS["ca"])
        ax.bar(pos + w / 2, [r["optimizer_cost"] for r in rows], w, label="Optimizer", color=COLORS["optimizer"])
        ax.set_xticks(pos, [r["scenario"] for r in rows])
        ax.set_ylabel("cost ($/hr)")
        ax.legend()
        return _save(fig, path)


def scaling(rows: Sequence[dict], path: str) -> str:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        f = [r["factor"] for r in rows]
        ax.plot(f, [r["ca_cost"] for r in rows], "o-", color=COLORS["ca"], label="Cluster Autoscaler")
        ax.plot(f, [r["optimizer_cost"] for r in rows], "s-", color=COLORS["optimizer"], label="Optimizer")
        ax.set_xscale("log", base=2)
        ax.set_xticks(f, [f"{v:g}x" for v in f])
        ax.set_xlabel("demand scale")
        ax.set_ylabel("cost ($/hr)")
        ax.legend()
        return _save(fig, path)


def radar(baseline: dict, optimized: dict, path: str, title: str = "") -> str:
    """Provided/demand per resource for both strategies; the unit circle is exact coverage."""
    names = [s["resource"] for s in optimized["series"]]
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(4, 4))
        ax = fig.add_subplot(projection="polar")
        if names:
            ang = np.linspace(0, 2 * np.pi, len(names), endpoint=False)
            ring = np.append(ang, ang[0])
            for label, data, key in (("Cluster Autoscaler", baseline, "ca"), ("Optimizer", optimized, "optimizer")):
                vals = [s["provided_normalized"] for s in data["series"]]
                ax.plot(ring, vals + vals[:1], color=COLORS[key], label=label)
                ax.fill(ring, vals + vals[:1], color=COLORS[key], alpha=0.15)
            ax.plot(ring, np.ones_like(ring), "k--", lw=0.8, label="demand")
            ax.set_xticks(ang, names)
        ax.set_title(title)
        ax.legend(loc="lower right", bbox_to_anchor=(1.25, -0.1))
        return _save(fig, path)


def tradeoff(rows: Sequence[dict], frontier: Sequence[dict], objectives: tuple, path: str) -> str:
    a, b = objectives
    pts = [r for r in rows if r.get(a) is not None and r.get(b) is not None]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.scatter([r[a] for r in pts], [r[b] for r in pts], s=14, color="0.6", label="grid cells")
        ax.plot([r[a] for r in frontier], [r[b] for r in frontier], "o-", color=COLORS["optimizer"],
                label="non-dominated")
        ax.set_xlabel(a)
        ax.set_ylabel(b)
        ax.legend()
        return _save(fig, path)
