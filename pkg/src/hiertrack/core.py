"""Core domain types: detections, tracklets, trajectories, and configuration.

All types are immutable after construction and safe to share across
workers. Boxes are (x, y, w, h) with (x, y) the top-left corner, in
pixels; frames are integer timestamps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

Box = Tuple[float, float, float, float]


class HiertrackError(ValueError):
    """Base class for contract violations raised by this package.

    kind is the machine-parsable error class the CLI prints: one of
    "contract", "config", "io", "data".
    """

    kind = "contract"


class ConfigError(HiertrackError):
    kind = "config"


class DataError(HiertrackError):
    kind = "data"


class IoError(HiertrackError):
    kind = "io"


@dataclass(frozen=True)
class Detection:
    """One bounding-box observation at a single frame."""

    frame: int
    box: Box
    confidence: float = 1.0
    class_id: int = 0
    embedding_id: int = -1
    gt_identity: Optional[int] = None

    def __post_init__(self):
        x, y, w, h = self.box
        if not (w > 0 and h > 0):
            raise HiertrackError(f"detection at frame {self.frame}: non-positive box size {w}x{h}")
        if self.frame < 0:
            raise HiertrackError(f"negative frame index {self.frame}")
        object.__setattr__(self, "box", (float(x), float(y), float(w), float(h)))

    @property
    def center(self) -> Tuple[float, float]:
        x, y, w, h = self.box
        return (x + w / 2.0, y + h / 2.0)


class EmbeddingTable:
    """Appearance embeddings, one row per detection; row index = embedding_id."""

    def __init__(self, vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise HiertrackError(f"embedding table must be 2-D, got shape {vectors.shape}")
        self.vectors = vectors

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def vector(self, embedding_id: int) -> np.ndarray:
        if not 0 <= embedding_id < len(self):
            raise HiertrackError(f"embedding_id {embedding_id} outside table of {len(self)} rows")
        return self.vectors[embedding_id]

    def normalized(self) -> "EmbeddingTable":
        """Copy with every row scaled to unit L2 norm (zero rows kept as-is)."""
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        return EmbeddingTable(self.vectors / safe)


def linear_velocity(detections: Sequence[Detection]) -> Optional[Tuple[float, float]]:
    """Least-squares slope of box centers against frame index, px/frame.

    Returns None for a single detection (no velocity can be estimated).
    """
    if len(detections) < 2:
        return None
    frames = np.array([d.frame for d in detections], dtype=np.float64)
    centers = np.array([d.center for d in detections], dtype=np.float64)
    t = frames - frames.mean()
    denom = float(np.dot(t, t))
    vx = float(np.dot(t, centers[:, 0] - centers[:, 0].mean()) / denom)
    vy = float(np.dot(t, centers[:, 1] - centers[:, 1].mean()) / denom)
    return (vx, vy)


@dataclass(frozen=True)
class Tracklet:
    """A time-ordered run of detections treated as one association node."""

    detections: Tuple[Detection, ...]
    avg_embedding: np.ndarray
    velocity: Optional[Tuple[float, float]]

    @property
    def t_start(self) -> int:
        return self.detections[0].frame

    @property
    def t_end(self) -> int:
        return self.detections[-1].frame

    @property
    def first(self) -> Detection:
        return self.detections[0]

    @property
    def last(self) -> Detection:
        return self.detections[-1]

    def __len__(self) -> int:
        return len(self.detections)

    def identity(self) -> Optional[int]:
        """The common gt identity of all members, or None if mixed/unlabeled."""
        ids = {d.gt_identity for d in self.detections}
        if len(ids) == 1:
            return next(iter(ids))
        return None


def make_tracklet(detections: Sequence[Detection], embeddings: EmbeddingTable) -> Tracklet:
    """Build a tracklet from a strictly time-ordered detection list.

    avg_embedding is the arithmetic mean of member embeddings; velocity is
    the least-squares fit over all members, absent for singletons.
    """
    if len(detections) == 0:
        raise HiertrackError("cannot build a tracklet from an empty detection list")
    frames = [d.frame for d in detections]
    for a, b in zip(frames, frames[1:]):
        if b <= a:
            raise HiertrackError(f"detections not strictly time-ordered: frame {a} then {b}")
    vecs = np.stack([embeddings.vector(d.embedding_id) for d in detections])
    return Tracklet(
        detections=tuple(detections),
        avg_embedding=vecs.mean(axis=0),
        velocity=linear_velocity(detections),
    )


def merge_tracklet_chain(chain: Sequence[Tracklet], embeddings: EmbeddingTable) -> Tracklet:
    """Concatenate temporally disjoint tracklets into one, recomputing aggregates."""
    dets: list[Detection] = []
    for t in chain:
        dets.extend(t.detections)
    return make_tracklet(dets, embeddings)


@dataclass(frozen=True)
class HierarchyConfig:
    """Hierarchy, pruning, and network-shape settings shared by all levels."""

    level_window_sizes: Tuple[int, ...] = (5, 25, 75, 150)
    knn_k: int = 15
    lambda_mix: float = 0.05
    message_passing_steps: int = 12
    node_dim: int = 32
    edge_dim: int = 16
    embedding_dim: int = 32
    # hidden widths of the five MLPs (input/output widths are implied)
    hidden_edge_init: int = 18
    hidden_edge: int = 80
    hidden_msg: int = 56
    hidden_node: int = 32
    hidden_class: int = 8

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.level_window_sizes)
        object.__setattr__(self, "level_window_sizes", sizes)
        if not sizes:
            raise HiertrackError("level_window_sizes must be non-empty")
        if any(s <= 0 for s in sizes):
            raise HiertrackError(f"window sizes must be positive: {sizes}")
        for a, b in zip(sizes, sizes[1:]):
            if b <= a:
                raise HiertrackError(f"window sizes must be increasing: {sizes}")
            if b % a != 0:
                raise HiertrackError(f"window size {a} does not divide the next size {b}")
        if self.knn_k < 1:
            raise HiertrackError(f"knn_k must be >= 1, got {self.knn_k}")
        if self.message_passing_steps < 1:
            raise HiertrackError("message_passing_steps must be >= 1")
        if not 0.0 <= self.lambda_mix <= 1.0:
            raise HiertrackError(f"lambda_mix must lie in [0, 1], got {self.lambda_mix}")

    @property
    def num_levels(self) -> int:
        return len(self.level_window_sizes)

    @property
    def clip_length(self) -> int:
        return self.level_window_sizes[-1]


@dataclass(frozen=True)
class Trajectory:
    """A final identity: a time-ordered detection list spanning the sequence."""

    identity: int
    detections: Tuple[Detection, ...]
    interpolated: Tuple[bool, ...] = field(default=())

    def __post_init__(self):
        if not self.interpolated:
            object.__setattr__(self, "interpolated", tuple(False for _ in self.detections))
        if len(self.interpolated) != len(self.detections):
            raise HiertrackError("interpolated flags must align with detections")
        frames = [d.frame for d in self.detections]
        for a, b in zip(frames, frames[1:]):
            if b <= a:
                raise HiertrackError(f"trajectory {self.identity} frames not strictly increasing")
