"""Recall-vs-QPS figure for a bench report. Needs the optional ``plot`` extra.

Kept out of the engine: nothing else in the package imports matplotlib.
"""

from __future__ import annotations

from pathlib import Path

from mstm.errors import SetupError


def plot_recall_qps(report, path, title: str | None = None) -> Path:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise SetupError("figures need matplotlib (pip install 'artifact[plot]')") from None
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for fw in dict.fromkeys(r.framework for r in report.rows):
        rows = sorted((r for r in report.rows if r.framework == fw), key=lambda r: r.recall)
        style = "s" if fw.endswith("exact") else "o-"
        ax.plot([r.recall for r in rows], [r.qps for r in rows], style, label=fw)
    ax.set_xlabel(f"Recall@{report.rows[0].k}" if report.rows else "Recall")
    ax.set_ylabel("QPS")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
