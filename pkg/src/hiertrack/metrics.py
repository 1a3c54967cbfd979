"""Identity-preservation evaluation (IDF1, ID switches) and hierarchy analysis.

Because the tracker re-links the very detections present in the ground
truth, detections correspond by exact frame-and-box identity first, with a
per-frame IoU >= 0.5 bipartite fallback for boxes that do not match
exactly (e.g. after lossy round trips).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Detection, EmbeddingTable, HierarchyConfig, HiertrackError
from .features import iou
from .pipeline import ClipRun, run_clip

BoxRow = Tuple[int, int, Tuple[float, float, float, float]]  # frame, identity, box


@dataclass
class EvalReport:
    idf1: float
    idtp: int
    idfp: int
    idfn: int
    id_switches: int
    num_pred: int
    num_gt: int
    sequence: str = ""

    @classmethod
    def from_counts(cls, idtp: int, idfp: int, idfn: int, switches: int,
                    num_pred: int, num_gt: int, sequence: str = "") -> "EvalReport":
        denom = 2 * idtp + idfp + idfn
        idf1 = (2.0 * idtp / denom) if denom else 0.0
        return cls(idf1, idtp, idfp, idfn, switches, num_pred, num_gt, sequence)


def combine_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Micro-average: counts are summed across sequences, then IDF1 recomputed."""
    return EvalReport.from_counts(
        idtp=sum(r.idtp for r in reports),
        idfp=sum(r.idfp for r in reports),
        idfn=sum(r.idfn for r in reports),
        switches=sum(r.id_switches for r in reports),
        num_pred=sum(r.num_pred for r in reports),
        num_gt=sum(r.num_gt for r in reports),
        sequence="combined",
    )


def _match_frame(
    preds: List[BoxRow], gts: List[BoxRow]
) -> List[Tuple[int, int]]:
    """Correspondence of one frame's boxes: exact box equality, then IoU >= 0.5."""
    pairs: List[Tuple[int, int]] = []
    gt_by_box: Dict[Tuple[float, float, float, float], List[int]] = {}
    for gi, (_, _, box) in enumerate(gts):
        gt_by_box.setdefault(box, []).append(gi)
    used_gt = set()
    unmatched_pred = []
    for pi, (_, _, box) in enumerate(preds):
        hit = None
        for gi in gt_by_box.get(box, ()):
            if gi not in used_gt:
                hit = gi
                break
        if hit is None:
            unmatched_pred.append(pi)
        else:
            used_gt.add(hit)
            pairs.append((pi, hit))
    rest_gt = [gi for gi in range(len(gts)) if gi not in used_gt]
    if unmatched_pred and rest_gt:
        cost = np.ones((len(unmatched_pred), len(rest_gt)))
        for r, pi in enumerate(unmatched_pred):
            for c, gi in enumerate(rest_gt):
                cost[r, c] = 1.0 - iou(preds[pi][2], gts[gi][2])
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            if cost[r, c] <= 0.5:
                pairs.append((unmatched_pred[r], rest_gt[c]))
    return pairs


def _frame_correspondences(
    pred: Sequence[BoxRow], gt: Sequence[BoxRow]
) -> List[Tuple[int, int, int]]:
    """(frame, gt identity, pred identity) for every matched detection pair."""
    pred_by_frame: Dict[int, List[BoxRow]] = {}
    gt_by_frame: Dict[int, List[BoxRow]] = {}
    for row in pred:
        pred_by_frame.setdefault(row[0], []).append(row)
    for row in gt:
        gt_by_frame.setdefault(row[0], []).append(row)
    out = []
    for frame in sorted(gt_by_frame.keys() | pred_by_frame.keys()):
        preds = pred_by_frame.get(frame, [])
        gts = gt_by_frame.get(frame, [])
        for pi, gi in _match_frame(preds, gts):
            out.append((frame, gts[gi][1], preds[pi][1]))
    return out


def idf1(pred: Sequence[BoxRow], gt: Sequence[BoxRow], sequence: str = "") -> EvalReport:
    """Identity F1 under the optimal one-to-one identity matching.

    IDTP is the largest number of per-frame detection correspondences
    explainable by a single gt-to-predicted identity assignment; IDFP and
    IDFN are the remaining predicted and ground-truth detections.
    """
    if not gt:
        raise HiertrackError("idf1 needs a non-empty ground truth")
    matches = _frame_correspondences(pred, gt)
    gt_ids = sorted({g for _, g, _ in matches})
    pred_ids = sorted({p for _, _, p in matches})
    overlap = np.zeros((len(gt_ids), len(pred_ids)), dtype=np.float64)
    g_index = {g: i for i, g in enumerate(gt_ids)}
    p_index = {p: i for i, p in enumerate(pred_ids)}
    for _, g, p in matches:
        overlap[g_index[g], p_index[p]] += 1
    if overlap.size:
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        idtp = int(overlap[rows, cols].sum())
    else:
        idtp = 0
    return EvalReport.from_counts(
        idtp=idtp,
        idfp=len(pred) - idtp,
        idfn=len(gt) - idtp,
        switches=id_switches(pred, gt),
        num_pred=len(pred),
        num_gt=len(gt),
        sequence=sequence,
    )


def id_switches(pred: Sequence[BoxRow], gt: Sequence[BoxRow]) -> int:
    """Frames where a gt identity's matched predicted identity changes
    relative to its most recent previous match."""
    matches = _frame_correspondences(pred, gt)
    last_match: Dict[int, int] = {}
    switches = 0
    for _, g, p in matches:  # matches are frame-ordered
        prev = last_match.get(g)
        if prev is not None and prev != p:
            switches += 1
        last_match[g] = p
    return switches


@dataclass
class LevelStats:
    level: int
    nodes: int
    edges: int
    positives: int

    @property
    def positive_ratio(self) -> float:
        return self.positives / self.edges if self.edges else 0.0


@dataclass
class HierarchyStats:
    levels: List[LevelStats]
    oracle_idf1: Optional[float] = None

    @property
    def total_edges(self) -> int:
        return sum(s.edges for s in self.levels)

    @property
    def total_positives(self) -> int:
        return sum(s.positives for s in self.levels)

    @property
    def positive_ratio(self) -> float:
        return self.total_positives / self.total_edges if self.total_edges else 0.0


def edge_stats(run: ClipRun) -> HierarchyStats:
    """Per-level node/edge/positive counts for one hierarchy run.

    Raises if any level exceeds the structural bound of two positive edges
    per node (one toward the past, one toward the future).
    """
    levels = []
    for level_run in run.levels:
        nodes = sum(g.num_nodes for g in level_run.graphs)
        edges = sum(g.num_edges for g in level_run.graphs)
        positives = sum(int(g.labels.sum()) for g in level_run.graphs if g.labels is not None)
        if positives > 2 * nodes:
            raise HiertrackError(
                f"level {level_run.level}: {positives} positive labels exceed 2x{nodes} nodes"
            )
        levels.append(LevelStats(level_run.level, nodes, edges, positives))
    return HierarchyStats(levels=levels)


def tracklets_to_rows(tracklets, start_identity: int = 1) -> List[BoxRow]:
    rows: List[BoxRow] = []
    for offset, t in enumerate(tracklets):
        for d in t.detections:
            rows.append((d.frame, start_identity + offset, d.box))
    return rows


def detections_to_rows(detections: Iterable[Detection]) -> List[BoxRow]:
    """Ground-truth view of labeled detections; unlabeled ones are ignored."""
    return [(d.frame, d.gt_identity, d.box) for d in detections if d.gt_identity is not None]


def oracle_upper_bound(
    detections: Sequence[Detection],
    table: EmbeddingTable,
    config: HierarchyConfig,
) -> Tuple[HierarchyStats, ClipRun]:
    """Run the hierarchy with ground-truth labels standing in for scores.

    The resulting IDF1 isolates graph connectivity quality: it is the score
    a perfect edge classifier could reach on this topology.
    """
    run = run_clip(detections, table, config, oracle=True)
    stats = edge_stats(run)
    gt_rows = detections_to_rows(detections)
    pred_rows = tracklets_to_rows(run.tracklets)
    stats.oracle_idf1 = idf1(pred_rows, gt_rows).idf1
    return stats, run
