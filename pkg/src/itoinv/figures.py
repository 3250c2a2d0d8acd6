"""Figure rendering for run reports: written to files next to the CSV/JSON
outputs, never shown interactively."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

MAX_PATHS_SHOWN = 8


def render_run_figures(outdir, result) -> list[Path]:
    """Render deviation, F-growth and trajectory figures for a RunResult.

    Returns the list of files written."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    made = []
    dev = result.summary["deviation"]
    times = np.asarray(dev["times"])

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(times, dev["mean"], label="mean |F - level|")
    ax.plot(times, dev["max"], label="max |F - level|", ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel("deviation")
    ax.set_title(f"{result.summary['run']['model']} / {result.summary['run']['transform']}")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = outdir / "deviation.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    made.append(p)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(times, dev["f_mean"], label="ensemble mean of F")
    if result.law is not None:
        ax.plot(times, [result.law.H(t) for t in times], ls="--", label="H(t)")
    ax.set_xlabel("t")
    ax.set_ylabel("F")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = outdir / "f_mean.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    made.append(p)

    ens = result.ensemble
    shown = min(MAX_PATHS_SHOWN, ens.paths)
    fig, axes = plt.subplots(ens.n, 1, figsize=(6.0, 1.8 * ens.n), sharex=True, squeeze=False)
    for comp in range(ens.n):
        ax = axes[comp][0]
        for pth in range(shown):
            ax.plot(times, ens.data[pth, :, comp], lw=0.8, alpha=0.8)
        ax.set_ylabel(f"x{comp + 1}")
    axes[-1][0].set_xlabel("t")
    fig.tight_layout()
    p = outdir / "trajectories.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    made.append(p)
    return made


def render_eps_scaling_figure(outdir, scan) -> Path:
    """Log-log plot of H(t; eps) - 1 against eps with the fitted slope."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    eps = np.asarray(scan.eps)
    gaps = np.abs(np.asarray(scan.gaps))
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    ax.loglog(eps, gaps, "o", label="H(t) - 1")
    ref = gaps[0] * (eps / eps[0]) ** scan.slope
    ax.loglog(eps, ref, "--", label=f"slope {scan.slope:.3f}")
    ax.set_xlabel("eps")
    ax.set_ylabel("H - 1")
    ax.legend(frameon=False)
    fig.tight_layout()
    p = outdir / "eps_scaling.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    return p
