"""Pairwise association features between temporally disjoint tracklets.

An edge always runs from the earlier tracklet u to the later tracklet v
(t_end(u) < t_start(v)); position and time features are computed from u's
last and v's first detection.
"""

from __future__ import annotations

import math
from typing import Optional, Tuple

import numpy as np

from .core import Box, HiertrackError, Tracklet, linear_velocity

# feature vector layout: 4 position terms, time, appearance,
# motion consistency (0 when unavailable), motion presence flag
FEATURE_DIM = 8


def _require_order(u: Tracklet, v: Tracklet) -> None:
    if u.t_end >= v.t_start:
        raise HiertrackError(
            f"tracklets overlap in time: u ends at {u.t_end}, v starts at {v.t_start}"
        )


def position_features(u: Tracklet, v: Tracklet) -> Tuple[float, float, float, float]:
    """Height-normalized offset and log size ratios of u's last vs v's first box."""
    _require_order(u, v)
    xu, yu, wu, hu = u.last.box
    xv, yv, wv, hv = v.first.box
    hsum = hu + hv
    return (
        2.0 * (xu - xv) / hsum,
        2.0 * (yu - yv) / hsum,
        math.log(wu / wv),
        math.log(hu / hv),
    )


def time_distance(u: Tracklet, v: Tracklet) -> float:
    """Frame gap t_start(v) - t_end(u); always positive for a valid edge."""
    _require_order(u, v)
    return float(v.t_start - u.t_end)


def appearance_distance(u: Tracklet, v: Tracklet) -> float:
    """Euclidean distance between the average appearance embeddings."""
    if u.avg_embedding.shape != v.avg_embedding.shape:
        raise HiertrackError(
            f"embedding dimension mismatch: {u.avg_embedding.shape} vs {v.avg_embedding.shape}"
        )
    return float(np.linalg.norm(u.avg_embedding - v.avg_embedding))


def estimate_velocity(t: Tracklet) -> Optional[Tuple[float, float]]:
    """Least-squares center velocity in px/frame; None for singleton tracklets."""
    return linear_velocity(t.detections)


def iou(a: Box, b: Box) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def giou(a: Box, b: Box) -> float:
    """Generalized IoU: IoU minus the empty fraction of the smallest enclosing box.

    Lies in (-1, 1]; equals IoU when one box contains the other's span.
    """
    aw, ah = a[2], a[3]
    bw, bh = b[2], b[3]
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise HiertrackError(f"degenerate box in giou: {a} vs {b}")
    cx1 = min(a[0], b[0])
    cy1 = min(a[1], b[1])
    cx2 = max(a[0] + aw, b[0] + bw)
    cy2 = max(a[1] + ah, b[1] + bh)
    enclosing = (cx2 - cx1) * (cy2 - cy1)
    ix = max(0.0, min(a[0] + aw, b[0] + bw) - max(a[0], b[0]))
    iy = max(0.0, min(a[1] + ah, b[1] + bh) - max(a[1], b[1]))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union - (enclosing - union) / enclosing


def giou_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise generalized IoU of two (N, 4) box arrays."""
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    ix = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(a[:, 0], b[:, 0]))
    iy = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(a[:, 1], b[:, 1]))
    inter = ix * iy
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    enclosing = (np.maximum(ax2, bx2) - np.minimum(a[:, 0], b[:, 0])) * (
        np.maximum(ay2, by2) - np.minimum(a[:, 1], b[:, 1])
    )
    return inter / union - (enclosing - union) / enclosing


def _shift_box(box: Box, dx: float, dy: float) -> Box:
    x, y, w, h = box
    return (x + dx, y + dy, w, h)


def motion_consistency(u: Tracklet, v: Tracklet) -> Optional[float]:
    """GIoU of u's last box propagated forward and v's first box propagated
    backward to the temporal midpoint of the gap; None when either velocity
    is unavailable. Box sizes are kept unchanged during propagation.
    """
    _require_order(u, v)
    if u.velocity is None or v.velocity is None:
        return None
    t_mid = (v.t_start - u.t_end) / 2.0
    fwd = _shift_box(u.last.box, t_mid * u.velocity[0], t_mid * u.velocity[1])
    bwd = _shift_box(v.first.box, -t_mid * v.velocity[0], -t_mid * v.velocity[1])
    return giou(fwd, bwd)


def edge_feature_vector(u: Tracklet, v: Tracklet, time_scale: float = 1.0) -> np.ndarray:
    """Concatenated 8-value edge feature vector.

    time_scale divides the raw frame gap so that one shared input layer sees
    comparable magnitudes across hierarchy levels (the graph builder passes
    the level's window size).
    """
    px, py, lw, lh = position_features(u, v)
    t = time_distance(u, v) / time_scale
    app = appearance_distance(u, v)
    motion = motion_consistency(u, v)
    if motion is None:
        motion_val, motion_flag = 0.0, 0.0
    else:
        motion_val, motion_flag = motion, 1.0
    return np.array([px, py, lw, lh, t, app, motion_val, motion_flag], dtype=np.float64)
