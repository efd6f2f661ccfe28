"""Figures written next to the CSV outputs of the CLI (matplotlib, no display)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_performance(curves, path):
    """``curves`` maps a label to a list of PsnrPoint."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    lo, hi = np.inf, -np.inf
    for label, pts in curves.items():
        a = np.array([(p.input_psnr, p.output_psnr) for p in pts])
        ax.plot(a[:, 0], a[:, 1], "o-", ms=3, label=label)
        lo, hi = min(lo, a.min()), max(hi, a.max())
    ax.plot([lo, hi], [lo, hi], "k:", lw=0.8, label="identity")
    ax.set_xlabel("input PSNR (dB)")
    ax.set_ylabel("output PSNR (dB)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_psychometric(fit, path):
    from .analysis import logistic

    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(fit.dr, fit.freq, "ko", label="samples")
    g = np.linspace(min(fit.dr), max(fit.dr), 200)
    ax.plot(g, logistic(g, fit.mu, fit.s), "b-", label=f"logistic (mu={fit.mu:.2f}, s={fit.s:.2f})")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("radius difference, right - left (px)")
    ax.set_ylabel("P(right disk on top)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_cues(curves, path):
    """``curves`` maps a probe name to a list of CuePoint."""
    fig, axes = plt.subplots(1, len(curves), figsize=(4 * len(curves), 3.6), squeeze=False)
    for ax, (name, rows) in zip(axes[0], curves.items()):
        x = [r.input_psnr for r in rows]
        ax.plot(x, [r.psnr_full for r in rows], "k-", label="x_hat")
        ax.plot(x, [r.psnr_y for r in rows], "C0-", label="observation part")
        ax.plot(x, [r.psnr_c for r in rows], "C1-", label="conditioning part")
        ax.set_title(name)
        ax.set_xlabel("input PSNR (dB)")
    axes[0, 0].set_ylabel("PSNR (dB)")
    axes[0, 0].legend(fontsize=8)
    return _save(fig, path)


def plot_filter(af, path, titles=None):
    w = af.weights
    fig, axes = plt.subplots(1, len(w), figsize=(2.6 * len(w), 2.8), squeeze=False)
    m = float(np.abs(w).max()) or 1.0
    for k, ax in enumerate(axes[0]):
        ax.imshow(w[k], cmap="RdBu_r", vmin=-m, vmax=m)
        ax.plot(af.pixel[1], af.pixel[0], "k+", ms=6)
        ax.set_title(titles[k] if titles else f"input {k}", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    return _save(fig, path)


def plot_frames(rows, path, row_labels=None):
    """Grid of grayscale frames; ``rows`` is a list of ``[T, H, W]`` arrays."""
    n = max(len(r) for r in rows)
    fig, axes = plt.subplots(len(rows), n, figsize=(1.3 * n, 1.4 * len(rows)), squeeze=False)
    for i, r in enumerate(rows):
        for j in range(n):
            ax = axes[i, j]
            ax.set_xticks([])
            ax.set_yticks([])
            if j < len(r):
                ax.imshow(r[j], cmap="gray", vmin=0, vmax=1)
            else:
                ax.axis("off")
        if row_labels:
            axes[i, 0].set_ylabel(row_labels[i], fontsize=8)
    return _save(fig, path)


def plot_demo1d(grid, trajectories, path):
    """Noisy densities and residuals (left), 1D sampler trajectories (right)."""
    fig, (a1, a2, a3) = plt.subplots(1, 3, figsize=(11, 3.4))
    for sig, rows in grid.items():
        a1.plot(rows["y"], rows["noisy_pdf"], label=f"sigma={sig:g}")
        a2.plot(rows["y"], rows["denoised"] - rows["y"], label=f"sigma={sig:g}")
    a1.set_xlabel("y")
    a1.set_ylabel("p(y)")
    a1.legend(fontsize=7)
    a2.axhline(0, color="k", lw=0.5)
    a2.set_xlabel("y")
    a2.set_ylabel("residual x_hat - y")
    for name, vals in trajectories.items():
        a3.plot(vals, lw=0.8, label=name)
    a3.set_xlabel("iteration")
    a3.set_ylabel("y_k")
    a3.legend(fontsize=7)
    return _save(fig, path)
