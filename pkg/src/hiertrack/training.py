"""Joint training across hierarchy levels: focal loss, unfreezing, Adam.

One parameter set is shared by all levels, so "freezing" a level means its
edges are excluded from the loss, not that separate weights exist. Frozen
levels still run forward so their merges feed the next level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .core import Detection, EmbeddingTable, HierarchyConfig, HiertrackError
from .mpn import ModelParams, backward, zeros_like_params
from .pipeline import Level1Cache, build_level1_graphs, run_clip


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    batch_clips: int = 8
    epochs: int = 100
    focal_gamma: float = 1.0
    unfreeze_interval: int = 750
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "batch_clips", "epochs", "unfreeze_interval"):
            if getattr(self, name) <= 0:
                raise HiertrackError(f"train config field {name} must be positive")
        if self.weight_decay < 0 or self.focal_gamma < 0:
            raise HiertrackError("weight_decay and focal_gamma must be non-negative")


def focal_loss(p, y, gamma: float) -> np.ndarray:
    """Cross-entropy scaled by the complement probability to the gamma power.

    No class-weighting factor is applied. p must lie strictly inside (0, 1).
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise HiertrackError("focal_loss probabilities must lie strictly in (0, 1)")
    pos = -((1.0 - p) ** gamma) * np.log(p)
    neg = -(p ** gamma) * np.log1p(-p)
    return np.where(y == 1, pos, neg)


def focal_loss_grad(p: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """d(focal_loss)/dp, elementwise."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y)
    q = 1.0 - p
    pos = gamma * (q ** (gamma - 1.0)) * np.log(p) - (q ** gamma) / p if gamma != 0 else -1.0 / p
    neg = -gamma * (p ** (gamma - 1.0)) * np.log1p(-p) + (p ** gamma) / q if gamma != 0 else 1.0 / q
    return np.where(y == 1, pos, neg)


def clip_loss(
    level_scores: Sequence[np.ndarray],
    level_labels: Sequence[np.ndarray],
    gamma: float,
    active_levels: Optional[Set[int]] = None,
) -> float:
    """Sum over active levels of the mean focal loss over that level's edges.

    Levels without edges contribute zero. Levels are numbered from 1.
    """
    total = 0.0
    for idx, (scores, labels) in enumerate(zip(level_scores, level_labels)):
        level = idx + 1
        if active_levels is not None and level not in active_levels:
            continue
        if scores.size == 0:
            continue
        total += float(focal_loss(scores, labels, gamma).mean())
    return total


def unfreeze_schedule(iteration: int, unfreeze_interval: int, num_levels: int) -> Set[int]:
    """Active (loss-contributing) levels at a given optimizer iteration.

    Level 1 starts active; one more level joins every unfreeze_interval
    iterations, from first to last. The active set never shrinks.
    """
    if iteration < 0:
        raise HiertrackError("iteration must be non-negative")
    active = min(num_levels, 1 + iteration // unfreeze_interval)
    return set(range(1, active + 1))


class AdamState:
    """Adam moments with bias correction and decoupled weight decay."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params: ModelParams):
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams, lr: float, weight_decay: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (_, p), (_, g), (_, m), (_, v) in zip(
            params.items(), grads.items(), self.m.items(), self.v.items()
        ):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= lr * update + lr * weight_decay * p


@dataclass
class TrainClip:
    """One training clip with its immutable level-1 graph cache."""

    detections: List[Detection]
    clip_start: int
    clip_length: int
    level1: Level1Cache


def prepare_clips(
    detections: Sequence[Detection],
    table: EmbeddingTable,
    config: HierarchyConfig,
) -> List[TrainClip]:
    """Slice a labeled sequence into consecutive clips of the top window size."""
    if not detections:
        raise HiertrackError("no detections to train on")
    if all(d.gt_identity is None for d in detections):
        raise HiertrackError("training clips need ground-truth identities")
    first = min(d.frame for d in detections)
    last = max(d.frame for d in detections)
    clip_len = config.clip_length
    clips = []
    start = first
    while start <= last:
        members = [d for d in detections if start <= d.frame < start + clip_len]
        if members:
            clips.append(
                TrainClip(
                    detections=members,
                    clip_start=start,
                    clip_length=clip_len,
                    level1=build_level1_graphs(members, table, config, start, clip_len),
                )
            )
        start += clip_len
    return clips


@dataclass
class StepRecord:
    iteration: int
    active_levels: Tuple[int, ...]
    level_losses: Tuple[float, ...]
    total_loss: float
    feasible_fraction: float

    def format(self) -> str:
        per_level = " ".join(
            f"loss_l{i + 1}={value:.6f}" for i, value in enumerate(self.level_losses)
        )
        active = ",".join(str(level) for level in self.active_levels)
        return (
            f"iter={self.iteration} active={active} {per_level} "
            f"loss={self.total_loss:.6f} feasible={self.feasible_fraction:.4f}"
        )


def train_step(
    batch: Sequence[TrainClip],
    table: EmbeddingTable,
    params: ModelParams,
    adam: AdamState,
    iteration: int,
    hierarchy: HierarchyConfig,
    config: TrainConfig,
) -> StepRecord:
    """One optimizer step over a batch of clips.

    Gradients are summed clip by clip in batch order, averaged over the
    batch, and applied with decoupled weight decay. Frozen levels run
    forward (their merges feed the next level) but contribute no loss.
    """
    if not batch:
        raise HiertrackError("empty training batch")
    active = unfreeze_schedule(iteration, config.unfreeze_interval, hierarchy.num_levels)
    grads = zeros_like_params(params)
    level_loss_sums = np.zeros(hierarchy.num_levels)
    level_loss_counts = np.zeros(hierarchy.num_levels)
    total_loss = 0.0
    feasible_num = 0.0
    feasible_den = 0

    for clip in batch:
        run = run_clip(
            clip.detections,
            table,
            hierarchy,
            params=params,
            clip_start=clip.clip_start,
            clip_length=clip.clip_length,
            with_labels=True,
            collect_caches=True,
            level1_cache=clip.level1,
        )
        feasible_num += run.feasible_fraction * run.nodes_total
        feasible_den += run.nodes_total
        for level_run in run.levels:
            level = level_run.level
            if level not in active:
                continue
            n_edges = sum(g.num_edges for g in level_run.graphs)
            if n_edges == 0:
                continue
            level_loss = 0.0
            for graph, cache in zip(level_run.graphs, level_run.caches):
                if graph.num_edges == 0:
                    continue
                scores = np.clip(graph.scores, 1e-15, 1.0 - 1e-15)
                level_loss += float(focal_loss(scores, graph.labels, config.focal_gamma).sum())
                d_scores = focal_loss_grad(scores, graph.labels, config.focal_gamma) / n_edges
                backward(cache, params, d_scores, grads)
            level_loss /= n_edges
            level_loss_sums[level - 1] += level_loss
            level_loss_counts[level - 1] += 1
            total_loss += level_loss

    scale = 1.0 / len(batch)
    for _, g in grads.items():
        g *= scale
    adam.step(params, grads, config.learning_rate, config.weight_decay)

    with np.errstate(invalid="ignore"):
        level_means = np.where(level_loss_counts > 0, level_loss_sums / np.maximum(level_loss_counts, 1), 0.0)
    return StepRecord(
        iteration=iteration,
        active_levels=tuple(sorted(active)),
        level_losses=tuple(float(x) for x in level_means),
        total_loss=total_loss * scale,
        feasible_fraction=(feasible_num / feasible_den) if feasible_den else 1.0,
    )


def train(
    clips: Sequence[TrainClip],
    table: EmbeddingTable,
    params: ModelParams,
    hierarchy: HierarchyConfig,
    config: TrainConfig,
    log: Optional[Callable[[str], None]] = None,
    adam: Optional[AdamState] = None,
    start_iteration: int = 0,
    max_iterations: Optional[int] = None,
) -> Tuple[AdamState, int, List[StepRecord]]:
    """Epoch loop with seeded shuffling; returns optimizer state and records."""
    if adam is None:
        adam = AdamState(params)
    rng = np.random.default_rng(config.seed)
    records: List[StepRecord] = []
    iteration = start_iteration
    n = len(clips)
    batch_size = min(config.batch_clips, n)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            batch = [clips[i] for i in order[lo : lo + batch_size]]
            record = train_step(batch, table, params, adam, iteration, hierarchy, config)
            records.append(record)
            if log is not None:
                log(record.format())
            iteration += 1
            if max_iterations is not None and iteration - start_iteration >= max_iterations:
                return adam, iteration, records
    return adam, iteration, records
