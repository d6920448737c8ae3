"""Figure rendering for CLI reports. Uses the Agg backend so runs
never require a display."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .trainer import EpochRecord


def save_loss_curves(records: list[EpochRecord], path: str):
    epochs = [r.epoch for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [r.loss_total for r in records], label="total", color="black")
    ax.plot(epochs, [r.loss_global for r in records], label="global", alpha=0.7)
    ax.plot(epochs, [r.loss_local for r in records], label="local", alpha=0.7)
    init_epochs = [r.epoch for r in records if r.phase == "init"]
    if init_epochs and len(init_epochs) < len(records):
        ax.axvline(max(init_epochs) + 0.5, color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean per-sample loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_eval_figure(report: dict, path: str):
    names = ["rank1", "rank5", "rank10", "mAP"]
    values = [report[n] for n in names]
    fig, ax = plt.subplots(figsize=(5.5, 4))
    bars = ax.bar(names, values, color=["#4c72b0"] * 3 + ["#dd8452"])
    for bar, value in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, value + 0.01, f"{value:.3f}",
                ha="center", va="bottom", fontsize=9)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(f"retrieval over {report['num_queries']} queries")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_figure(rows: list[dict], parameter: str, path: str):
    """One marker per sweep setting; x labels are the setting values."""
    labels = [str(r["value"]) for r in rows]
    x = range(len(rows))
    fig, ax = plt.subplots(figsize=(6.5, 4))
    ax.plot(x, [r["mAP"] for r in rows], marker="o", label="mAP")
    ax.plot(x, [r["rank1"] for r in rows], marker="s", label="rank-1")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_xlabel(parameter)
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
