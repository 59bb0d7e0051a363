"""SVG chart emission for the CLI.

Charts must be byte-reproducible for a given input, so the Date metadata is
stripped and the SVG id-hash salt is pinned.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["line_chart", "box_chart"]

_SALT = "formationbench"


def _save(fig, path):
    with plt.rc_context({"svg.hashsalt": _SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def line_chart(path, series, xlabel: str, ylabel: str, title: str = "",
               logy: bool = False):
    """series: iterable of (x, y, label). label None suppresses the legend
    entry."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    labelled = False
    for x, y, label in series:
        ax.plot(x, y, label=label, linewidth=1.2)
        labelled = labelled or label is not None
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if labelled:
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def box_chart(path, groups: dict, ylabel: str, title: str = ""):
    """groups: mapping of label -> samples."""
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    labels = list(groups)
    ax.boxplot([groups[k] for k in labels], tick_labels=labels, whis=(0.0, 100.0))
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
