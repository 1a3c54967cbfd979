"""Delimited reports and the figures rendered alongside them."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import EvalReport, HierarchyStats
from .training import StepRecord


def eval_report_lines(report: EvalReport) -> List[str]:
    return [
        f"idf1={report.idf1:.6f}",
        f"idtp={report.idtp}",
        f"idfp={report.idfp}",
        f"idfn={report.idfn}",
        f"id_switches={report.id_switches}",
        f"num_pred={report.num_pred}",
        f"num_gt={report.num_gt}",
    ]


def write_eval_csv(reports: Sequence[EvalReport], path: Path) -> None:
    lines = ["sequence,idf1,idtp,idfp,idfn,id_switches,num_pred,num_gt"]
    for r in reports:
        lines.append(
            f"{r.sequence},{r.idf1:.6f},{r.idtp},{r.idfp},{r.idfn},{r.id_switches},{r.num_pred},{r.num_gt}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_stats_csv(stats: Sequence[Tuple[str, HierarchyStats]], path: Path) -> None:
    """One row per level plus a total row per configuration."""
    lines = ["config,level,nodes,edges,positives,positive_ratio,oracle_idf1"]
    for label, hs in stats:
        for level in hs.levels:
            lines.append(
                f"{label},{level.level},{level.nodes},{level.edges},"
                f"{level.positives},{level.positive_ratio:.6f},"
            )
        oracle = f"{hs.oracle_idf1:.6f}" if hs.oracle_idf1 is not None else ""
        lines.append(
            f"{label},total,,{hs.total_edges},{hs.total_positives},"
            f"{hs.positive_ratio:.6f},{oracle}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def plot_analysis(stats: Sequence[Tuple[str, HierarchyStats]], path: Path) -> None:
    """Edge budget vs oracle IDF1, circle area showing the positive-label ratio."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    ratios = [hs.positive_ratio for _, hs in stats]
    max_ratio = max(ratios) if ratios else 1.0
    for label, hs in stats:
        size = 2000.0 * (hs.positive_ratio / max_ratio if max_ratio else 0.0) + 30.0
        ax.scatter(
            [hs.total_edges],
            [hs.oracle_idf1 if hs.oracle_idf1 is not None else 0.0],
            s=size,
            alpha=0.6,
            label=f"{label} (ratio {hs.positive_ratio:.3f})",
        )
    ax.set_xlabel("total edges")
    ax.set_ylabel("oracle IDF1")
    ax.set_title("Edge budget vs oracle IDF1 (circle area = positive-label ratio)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Date": None})
    plt.close(fig)


def plot_training(records: Sequence[StepRecord], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    iterations = [r.iteration for r in records]
    ax.plot(iterations, [r.total_loss for r in records], label="total", linewidth=1.5)
    if records:
        n_levels = len(records[0].level_losses)
        for level in range(n_levels):
            ax.plot(
                iterations,
                [r.level_losses[level] for r in records],
                label=f"level {level + 1}",
                alpha=0.6,
                linewidth=0.9,
            )
    ax.set_xlabel("iteration")
    ax.set_ylabel("focal loss")
    ax.set_title("Training loss per level")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Date": None})
    plt.close(fig)
