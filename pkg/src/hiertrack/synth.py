"""Deterministic synthetic scenarios: detections, identities, embeddings.

Objects follow piecewise-linear motion bounced at the frame borders.
Occlusion removes contiguous runs of detections, dropout removes isolated
ones, boxes get Gaussian jitter, and appearance embeddings are per-identity
base vectors plus per-frame noise. Everything is a pure function of the
config (seed included).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .core import Detection, EmbeddingTable, HiertrackError


@dataclass(frozen=True)
class ScenarioConfig:
    num_objects: int = 10
    num_frames: int = 150
    frame_size: Tuple[int, int] = (1920, 1080)
    speed_range: Tuple[float, float] = (1.0, 4.0)
    turn_probability: float = 0.02
    occlusion_probability: float = 0.005
    max_occlusion: int = 30
    dropout: float = 0.0
    jitter: float = 0.0
    embedding_dim: int = 16
    appearance_noise: float = 0.1
    uniform_appearance: bool = False
    box_size_range: Tuple[float, float] = (24.0, 60.0)
    seed: int = 0

    def __post_init__(self):
        if self.num_objects <= 0 or self.num_frames <= 0:
            raise HiertrackError("scenario needs at least one object and one frame")
        for rate in (self.turn_probability, self.occlusion_probability, self.dropout):
            if not 0.0 <= rate <= 1.0:
                raise HiertrackError(f"rate {rate} outside [0, 1]")
        if self.max_occlusion > self.num_frames:
            raise HiertrackError("max_occlusion cannot exceed num_frames")
        if self.embedding_dim <= 0:
            raise HiertrackError("embedding_dim must be positive")


def generate(config: ScenarioConfig) -> Tuple[List[Detection], EmbeddingTable]:
    """Simulate a scenario; detections come back sorted by (frame, identity)
    with embedding_id equal to their row in the returned table."""
    rng = np.random.default_rng(config.seed)
    width, height = config.frame_size

    n = config.num_objects
    box_w = rng.uniform(*config.box_size_range, size=n)
    box_h = box_w * rng.uniform(1.5, 2.5, size=n)
    pos = np.column_stack(
        [rng.uniform(box_w, width - box_w), rng.uniform(box_h, height - box_h)]
    )
    speed = rng.uniform(*config.speed_range, size=n)
    angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
    vel = np.column_stack([speed * np.cos(angle), speed * np.sin(angle)])

    if config.uniform_appearance:
        shared = rng.normal(size=config.embedding_dim)
        bases = np.tile(shared, (n, 1))
    else:
        bases = rng.normal(size=(n, config.embedding_dim))

    occluded_until = np.full(n, -1, dtype=np.int64)
    raw: List[Tuple[int, int, float, float, float, float]] = []
    for frame in range(config.num_frames):
        for obj in range(n):
            # bounce at borders, keeping the box fully inside the frame
            pos[obj] += vel[obj]
            if pos[obj, 0] < box_w[obj] / 2 or pos[obj, 0] > width - box_w[obj] / 2:
                vel[obj, 0] = -vel[obj, 0]
                pos[obj, 0] = np.clip(pos[obj, 0], box_w[obj] / 2, width - box_w[obj] / 2)
            if pos[obj, 1] < box_h[obj] / 2 or pos[obj, 1] > height - box_h[obj] / 2:
                vel[obj, 1] = -vel[obj, 1]
                pos[obj, 1] = np.clip(pos[obj, 1], box_h[obj] / 2, height - box_h[obj] / 2)
            if rng.random() < config.turn_probability:
                new_angle = rng.uniform(0.0, 2.0 * np.pi)
                vel[obj] = speed[obj] * np.array([np.cos(new_angle), np.sin(new_angle)])

            if frame <= occluded_until[obj]:
                continue
            if config.occlusion_probability > 0 and rng.random() < config.occlusion_probability:
                gap = int(rng.integers(1, config.max_occlusion + 1)) if config.max_occlusion else 0
                if gap:
                    occluded_until[obj] = frame + gap - 1
                    continue
            if config.dropout > 0 and rng.random() < config.dropout:
                continue

            x = pos[obj, 0] - box_w[obj] / 2
            y = pos[obj, 1] - box_h[obj] / 2
            w, h = box_w[obj], box_h[obj]
            if config.jitter > 0:
                x += rng.normal(0.0, config.jitter)
                y += rng.normal(0.0, config.jitter)
                w = max(1.0, w + rng.normal(0.0, config.jitter))
                h = max(1.0, h + rng.normal(0.0, config.jitter))
            raw.append((frame, obj + 1, x, y, w, h))

    vectors = np.zeros((len(raw), config.embedding_dim), dtype=np.float64)
    detections: List[Detection] = []
    for row, (frame, identity, x, y, w, h) in enumerate(raw):
        vectors[row] = bases[identity - 1] + rng.normal(
            0.0, config.appearance_noise, size=config.embedding_dim
        )
        detections.append(
            Detection(
                frame=frame,
                box=(x, y, w, h),
                confidence=1.0,
                class_id=0,
                embedding_id=row,
                gt_identity=identity,
            )
        )
    return detections, EmbeddingTable(vectors.astype(np.float32).astype(np.float64))
