"""Report figures rendered to files alongside the delimited output.

The CSV/JSON artifacts remain the machine contract; these PNGs are a
human-readable side channel produced on request (CLI --plots).
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_trajectory",
    "render_extinction",
    "render_sweep_distances",
]


def render_trajectory(record, path, title=None):
    """Kinetic energy and dissipation channels over one period."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 6.0), sharex=True)
    ax1.plot(record.times, record.kinetic, color="C0")
    ax1.set_ylabel(r"$\|v\|_{L^2}^2$")
    if title:
        ax1.set_title(title)
    for name, series, color in (
        (r"$\|Dv\|_{L^q}^q$", record.dissipation_q, "C1"),
        (r"$\varepsilon\|\nabla v\|_{L^2}^2$", record.dissipation_lap, "C2"),
        (r"$\varepsilon\|Dv\|_{L^{11/5}}^{11/5}$", record.dissipation_p, "C3"),
        (r"$(b, v)$", record.power_in, "C4"),
    ):
        ax2.plot(record.times, series, label=name, color=color, lw=1.0)
    ax2.set_xlabel("t")
    ax2.set_ylabel("power / dissipation")
    ax2.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_extinction(report, record, path):
    """Decay of ||v||^(2-q) after shutoff with the fitted line and the bound."""
    q = record.q
    norms = np.sqrt(np.maximum(record.kinetic, 0.0))
    z = norms ** (2.0 - q)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(record.times, z, color="C0", lw=1.0, label=r"$\|v(t)\|^{2-q}$")
    for t, style, name in (
        (report.t_bar, "--", r"$\bar t$ (shutoff)"),
        (report.t_meas, "-.", r"$t_{meas}$"),
        (report.t_bar_v, ":", r"$\bar t_v$ (bound)"),
    ):
        if t is not None and math.isfinite(t):
            ax.axvline(t, linestyle=style, color="k", lw=0.8)
            ax.annotate(name, (t, ax.get_ylim()[1] * 0.9), rotation=90,
                        fontsize=7, ha="right")
    if math.isfinite(report.slope):
        mask = (record.times >= report.t_bar) & (record.times <= report.t_bar_v)
        tt = record.times[mask]
        z0 = z[mask][0] if np.any(mask) else z[0]
        ax.plot(tt, z0 + report.slope * (tt - tt[0]), color="C1", lw=1.0,
                label=f"fit, slope {report.slope:.3g}")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\|v\|^{2-q}$")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_sweep_distances(report, path):
    """Successive-refinement orbit distances per sweep axis."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    by_axis = {}
    for entry in report.distances:
        by_axis.setdefault(entry["axis"], []).append(entry)
    if not by_axis:
        ax.text(0.5, 0.5, "no refinement distances", ha="center", va="center")
    for axis, entries in by_axis.items():
        xs = [0.5 * (e["level_a"] + e["level_b"]) if axis == "n_max"
              else math.sqrt(e["level_a"] * e["level_b"]) for e in entries]
        ys = [e["value"] for e in entries]
        order = np.argsort(xs)
        ax.plot(np.asarray(xs)[order], np.asarray(ys)[order], "o-", label=axis)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("refinement level (pair midpoint)")
    ax.set_ylabel(r"$L^2L^2$ orbit distance")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
