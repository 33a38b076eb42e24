"""Matplotlib figure rendering for bench and training reports.

Figures are written to files next to the delimited output; nothing is
ever shown interactively, so the Agg backend is forced before pyplot
loads.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_accuracy_bars(accuracies: Mapping[str, float], out_path: str | Path) -> Path:
    """One bar per method, accuracy in percent."""
    out_path = Path(out_path)
    methods = list(accuracies)
    values = [100.0 * accuracies[m] for m in methods]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(methods, values, color="#4878a8")
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Accuracy by method")
    for bar, value in zip(bars, values):
        ax.annotate(f"{value:.1f}", (bar.get_x() + bar.get_width() / 2, value),
                    ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_training_curves(expected_rewards: Sequence[float],
                           grad_norms_upper: Sequence[float],
                           grad_norms_lower: Sequence[float],
                           out_path: str | Path) -> Path:
    """Expected reward and gradient norms across iterations."""
    out_path = Path(out_path)
    iterations = range(len(expected_rewards))
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.plot(iterations, expected_rewards, color="#2a7f4f")
    ax1.set_ylabel("expected reward")
    ax1.set_ylim(0, 1.05)
    ax1.set_title("Alternating training")
    ax2.plot(iterations, grad_norms_upper, label="upper", color="#4878a8")
    ax2.plot(iterations, grad_norms_lower, label="lower", color="#b0562e")
    ax2.set_ylabel("gradient norm")
    ax2.set_xlabel("iteration")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
