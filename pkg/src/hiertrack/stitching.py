"""Arbitrary-length sequences: overlapping windows, stitching, interpolation.

The hierarchy handles one clip at a time; longer sequences are processed in
a sliding-window fashion and trajectories from consecutive windows are
matched by the detections they share inside the overlap.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Detection, EmbeddingTable, HierarchyConfig, HiertrackError, Tracklet, Trajectory
from .mpn import ModelParams
from .pipeline import run_clip

_FORBIDDEN = 1e9  # stands in for an infinite matching cost


@dataclass(frozen=True)
class WindowPlan:
    """Sliding windows [start, end) covering a frame range with fixed overlap."""

    window_length: int = 150
    stride: int = 75
    intervals: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.window_length <= 0 or self.stride <= 0:
            raise HiertrackError("window length and stride must be positive")
        if self.stride > self.window_length:
            raise HiertrackError("stride larger than the window leaves coverage gaps")


def plan_windows(first_frame: int, last_frame: int, window_length: int = 150, stride: int = 75) -> WindowPlan:
    """Cover [first_frame, last_frame] with stride-spaced windows.

    A tail shorter than one window becomes a final shortened window starting
    at (end - window_length), clamped to the first frame.
    """
    end = last_frame + 1
    if end - first_frame <= window_length:
        intervals = [(first_frame, end)]
    else:
        intervals = []
        start = first_frame
        while start + window_length < end:
            intervals.append((start, start + window_length))
            start += stride
        intervals.append((max(first_frame, end - window_length), end))
    return WindowPlan(window_length=window_length, stride=stride, intervals=tuple(intervals))


def track_overlap_iou(track_a: Sequence[Detection], track_b: Sequence[Detection],
                      interval: Tuple[int, int]) -> float:
    """Shared-detection ratio of two tracks restricted to a frame interval.

    Detections are "the same" when they are the same underlying input row
    (embedding_id); interpolated boxes never count as shared.
    """
    lo, hi = interval
    a = {d.embedding_id for d in track_a if lo <= d.frame < hi and d.embedding_id >= 0}
    b = {d.embedding_id for d in track_b if lo <= d.frame < hi and d.embedding_id >= 0}
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def stitch_pair(
    tracks_a: Sequence[Tracklet],
    tracks_b: Sequence[Tracklet],
    interval: Tuple[int, int],
) -> Dict[int, int]:
    """Min-cost bipartite matching of window B tracks onto window A tracks.

    Cost is 1 - overlap IoU for pairs sharing at least one detection and
    infinite otherwise. Returns {b_index: a_index}; unmatched B tracks are
    absent and get fresh identities.
    """
    if not tracks_a or not tracks_b:
        return {}
    cost = np.full((len(tracks_b), len(tracks_a)), _FORBIDDEN, dtype=np.float64)
    for bi, tb in enumerate(tracks_b):
        for ai, ta in enumerate(tracks_a):
            shared = track_overlap_iou(ta.detections, tb.detections, interval)
            if shared > 0.0:
                cost[bi, ai] = 1.0 - shared
    rows, cols = linear_sum_assignment(cost)
    return {int(b): int(a) for b, a in zip(rows, cols) if cost[b, a] < _FORBIDDEN / 2}


def _assemble(identity: int, detections: List[Detection]) -> Trajectory:
    by_frame: Dict[int, Detection] = {}
    for d in detections:  # earlier windows first; first writer wins on a frame
        by_frame.setdefault(d.frame, d)
    ordered = [by_frame[f] for f in sorted(by_frame)]
    return Trajectory(identity=identity, detections=tuple(ordered))


def track_sequence(
    detections: Sequence[Detection],
    table: EmbeddingTable,
    config: HierarchyConfig,
    params: Optional[ModelParams] = None,
    oracle: bool = False,
    plan: Optional[WindowPlan] = None,
    interpolate: bool = True,
    threads: int = 1,
) -> List[Trajectory]:
    """Track a whole sequence: hierarchy per window, stitch, interpolate.

    Identity propagation is a strict left-to-right chain: window i is
    matched only against window i+1 on their overlap.
    """
    if not detections:
        return []
    if plan is None:
        frames = [d.frame for d in detections]
        plan = plan_windows(min(frames), max(frames))

    def run_window(interval: Tuple[int, int]) -> List[Tracklet]:
        lo, hi = interval
        members = [d for d in detections if lo <= d.frame < hi]
        if not members:
            return []
        run = run_clip(
            members, table, config, params=params, oracle=oracle,
            clip_start=lo, clip_length=hi - lo,
        )
        return run.tracklets

    intervals = list(plan.intervals)
    if threads > 1 and len(intervals) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            window_tracks = list(pool.map(run_window, intervals))
    else:
        window_tracks = [run_window(iv) for iv in intervals]

    # assign identities, chaining matches through consecutive overlaps
    next_identity = 1
    identities: List[List[int]] = []
    for w, tracks in enumerate(window_tracks):
        ids = [0] * len(tracks)
        if w == 0:
            mapping: Dict[int, int] = {}
        else:
            overlap = (intervals[w][0], intervals[w - 1][1])
            mapping = stitch_pair(window_tracks[w - 1], tracks, overlap)
        for bi in range(len(tracks)):
            if bi in mapping:
                ids[bi] = identities[w - 1][mapping[bi]]
            else:
                ids[bi] = next_identity
                next_identity += 1
        identities.append(ids)

    collected: Dict[int, List[Detection]] = {}
    for tracks, ids in zip(window_tracks, identities):
        for track, ident in zip(tracks, ids):
            collected.setdefault(ident, []).extend(track.detections)

    trajectories = [_assemble(ident, dets) for ident, dets in sorted(collected.items())]
    if interpolate:
        trajectories = [interpolate_gaps(t) for t in trajectories]
    return trajectories


def interpolate_gaps(trajectory: Trajectory) -> Trajectory:
    """Fill internal frame gaps by per-coordinate linear interpolation.

    Inserted detections are flagged; originals are never modified and there
    is no extrapolation beyond the endpoints.
    """
    dets = trajectory.detections
    if len(dets) < 2:
        return trajectory
    out: List[Detection] = [dets[0]]
    flags: List[bool] = [trajectory.interpolated[0]]
    for prev, prev_flag, cur, cur_flag in zip(
        dets, trajectory.interpolated, dets[1:], trajectory.interpolated[1:]
    ):
        gap = cur.frame - prev.frame
        for step in range(1, gap):
            t = step / gap
            box = tuple(
                (1.0 - t) * pa + t * pb for pa, pb in zip(prev.box, cur.box)
            )
            out.append(
                Detection(
                    frame=prev.frame + step,
                    box=box,
                    confidence=(1.0 - t) * prev.confidence + t * cur.confidence,
                    class_id=prev.class_id,
                    embedding_id=-1,
                    gt_identity=None,
                )
            )
            flags.append(True)
        out.append(cur)
        flags.append(cur_flag)
    return Trajectory(identity=trajectory.identity, detections=tuple(out), interpolated=tuple(flags))
