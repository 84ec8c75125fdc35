"""Report figures for the CLI: every delimited output gets a rendered plot."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_error_curve(rows: np.ndarray, path) -> None:
    """Approximation-error curves: fixed vs window-tracking filter variance."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rows[:, 0], rows[:, 1], label="fixed variance", color="tab:red")
    ax.plot(rows[:, 0], rows[:, 2], label="window-tracking variance", color="tab:blue")
    ax.set_xlabel("window size w (pixels)")
    ax.set_ylabel("relative approximation error")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_eval(rows: list[dict], path) -> None:
    """PSNR and SSIM against scale factor, one line per camera."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    cams = sorted({r["camera"] for r in rows})
    for cam in cams:
        sub = sorted((r for r in rows if r["camera"] == cam), key=lambda r: r["scale"])
        scales = [r["scale"] for r in sub]
        axes[0].plot(scales, [r["psnr"] for r in sub], marker="o", label=f"camera {cam}")
        axes[1].plot(scales, [r["ssim"] for r in sub], marker="o", label=f"camera {cam}")
    axes[0].set_xlabel("scale factor")
    axes[0].set_ylabel("PSNR (dB)")
    axes[1].set_xlabel("scale factor")
    axes[1].set_ylabel("SSIM")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_loss_log(loss_log: list[dict], path) -> None:
    """Total loss per global step with stage boundaries marked."""
    rows = [r for r in loss_log if "total" in r]
    if not rows:
        return
    steps = [r["global_step"] for r in rows]
    totals = [r["total"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, totals, lw=0.8)
    ax.set_xlabel("global step")
    ax.set_ylabel("total loss")
    ax.set_yscale("log")
    seen = set()
    for r in rows:
        if r["stage"] not in seen:
            seen.add(r["stage"])
            label = "warm-up" if r["stage"] < 0 else f"stage {r['stage'] + 1}"
            ax.axvline(r["global_step"], color="gray", ls=":", lw=0.8)
            ax.text(r["global_step"], max(totals), label, fontsize=7, rotation=90, va="top")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_stage_metrics(metrics: list[dict], path) -> None:
    """Stage-end PSNR per render scale."""
    rows = [m for m in metrics if m.get("psnr") is not None]
    if not rows:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    scales = sorted({m["scale"] for m in rows})
    for s in scales:
        sub = [m for m in rows if m["scale"] == s]
        ax.plot(
            [m["stage"] + 1 for m in sub],
            [m["psnr"] for m in sub],
            marker="o",
            label=f"scale {s:g}",
        )
    ax.set_xlabel("stage (0 = warm-up)")
    ax.set_ylabel("PSNR (dB)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(rows: list[dict], path) -> None:
    """Median render time against pixel count, one line per filter config."""
    fig, ax = plt.subplots(figsize=(6, 4))
    configs = sorted({r.get("config", "default") for r in rows})
    for config in configs:
        sub = sorted(
            (r for r in rows if r.get("config", "default") == config),
            key=lambda r: r["width"] * r["height"],
        )
        pixels = [r["width"] * r["height"] / 1e6 for r in sub]
        ms = [r["median_ms"] for r in sub]
        ax.plot(pixels, ms, marker="o", label=config)
        for r, x, y in zip(sub, pixels, ms):
            if config == configs[0]:
                ax.annotate(
                    f"{r['width']}x{r['height']}",
                    (x, y),
                    fontsize=7,
                    xytext=(4, 4),
                    textcoords="offset points",
                )
    ax.set_xlabel("megapixels")
    ax.set_ylabel("median render time (ms)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
