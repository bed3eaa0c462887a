"""Matplotlib rendering of harness reports to image files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .harness import TransformReport


def render_attack_boxplot(report: TransformReport, path, correct_accuracy: float | None = None) -> None:
    """Box plot of wrong-key accuracies (quartile box, 1.5*IQR whiskers, outlier dots)."""
    if not report.per_trial:
        raise ValueError("report has no per-trial accuracies to plot")
    fig, ax = plt.subplots(figsize=(4, 5))
    ax.boxplot([report.per_trial], whis=1.5, widths=0.5)
    if correct_accuracy is not None:
        ax.axhline(correct_accuracy, color="tab:green", linestyle="--", label="correct key")
    chance = report.metrics.get("chance")
    if chance is not None:
        ax.axhline(chance, color="tab:red", linestyle=":", label="chance")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("accuracy")
    ax.set_xticklabels(["wrong keys"])
    if correct_accuracy is not None or chance is not None:
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_equivalence_hist(report: TransformReport, path) -> None:
    """Summary bar for an equivalence run: max logit difference and agreement."""
    fig, ax = plt.subplots(figsize=(5, 3))
    names = ["max_abs_logit_diff", "argmax_agreement"]
    vals = [report.metrics.get(n, 0.0) for n in names]
    ax.bar(names, vals, color=["tab:blue", "tab:green"])
    ax.set_yscale("log")
    for i, v in enumerate(vals):
        ax.text(i, max(v, 1e-12), f"{v:.3g}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
