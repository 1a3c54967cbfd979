"""Running the full hierarchy over one clip: build, score, round, merge per level.

Scores come either from the trained network or, in oracle mode, from the
ground-truth edge labels (used for upper-bound analysis and for pipeline
tests with perfect classification).

Each level's disjoint window graphs are processed as one union graph; the
results are identical window by window because edges never cross windows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import Detection, EmbeddingTable, HierarchyConfig, HiertrackError, Tracklet, make_tracklet
from .graph import (
    AssociationGraph,
    assign_edge_labels,
    build_graph,
    merge_tracklets,
    partition_clip,
    union_graphs,
)
from .mpn import ForwardCache, ModelParams, forward
from .rounding import round_scores

Level1Cache = Dict[int, AssociationGraph]  # class_id -> union graph of level 1


@dataclass
class LevelRun:
    """The scored union graph(s) of one hierarchy level within one clip,
    one graph per object class."""

    level: int  # 1-based
    graphs: List[AssociationGraph] = field(default_factory=list)
    caches: List[Optional[ForwardCache]] = field(default_factory=list)


@dataclass
class ClipRun:
    levels: List[LevelRun]
    tracklets: List[Tracklet]
    nodes_total: int = 0
    violating_nodes_total: int = 0

    @property
    def feasible_fraction(self) -> float:
        if self.nodes_total == 0:
            return 1.0
        return 1.0 - self.violating_nodes_total / self.nodes_total


def singleton_tracklets(detections: Sequence[Detection], table: EmbeddingTable) -> List[Tracklet]:
    dets = sorted(detections, key=lambda d: (d.frame, d.box, d.embedding_id))
    return [make_tracklet([d], table) for d in dets]


def _group_by_window(
    tracklets: Sequence[Tracklet], windows, clip_start: int, size: int
) -> List[List[Tracklet]]:
    grouped: List[List[Tracklet]] = [[] for _ in windows]
    for t in tracklets:
        grouped[(t.t_start - clip_start) // size].append(t)
    return grouped


def _level_union(
    tracklets: Sequence[Tracklet],
    level_idx: int,
    windows,
    clip_start: int,
    config: HierarchyConfig,
) -> AssociationGraph:
    size = config.level_window_sizes[level_idx]
    grouped = _group_by_window(tracklets, windows, clip_start, size)
    graphs = [
        build_graph(members, level_idx + 1, window, config)
        for window, members in zip(windows, grouped)
    ]
    return union_graphs(graphs)


def build_level1_graphs(
    detections: Sequence[Detection],
    table: EmbeddingTable,
    config: HierarchyConfig,
    clip_start: int,
    clip_length: int,
) -> Level1Cache:
    """Precompute the level-1 union graph per class; it never changes across
    training iterations because level-1 nodes are the raw detections."""
    cache: Level1Cache = {}
    windows = partition_clip(clip_start, clip_length, config)[0]
    for class_id in sorted({d.class_id for d in detections}):
        tracklets = singleton_tracklets([d for d in detections if d.class_id == class_id], table)
        cache[class_id] = _level_union(tracklets, 0, windows, clip_start, config)
    return cache


def run_clip(
    detections: Sequence[Detection],
    table: EmbeddingTable,
    config: HierarchyConfig,
    params: Optional[ModelParams] = None,
    oracle: bool = False,
    clip_start: Optional[int] = None,
    clip_length: Optional[int] = None,
    with_labels: bool = False,
    collect_caches: bool = False,
    level1_cache: Optional[Level1Cache] = None,
) -> ClipRun:
    """Process one clip through every hierarchy level and return the result.

    Graphs are built independently per object class; cross-class edges never
    exist. Oracle mode substitutes ground-truth labels for network scores.
    """
    if not oracle and params is None:
        raise HiertrackError("run_clip needs trained parameters unless oracle=True")
    if not detections:
        return ClipRun(levels=[LevelRun(level=i + 1) for i in range(config.num_levels)], tracklets=[])
    if clip_start is None:
        clip_start = min(d.frame for d in detections)
    if clip_length is None:
        clip_length = max(d.frame for d in detections) - clip_start + 1

    level_windows = partition_clip(clip_start, clip_length, config)
    levels = [LevelRun(level=i + 1) for i in range(config.num_levels)]
    final: List[Tracklet] = []
    nodes_total = 0
    violating_total = 0

    for class_id in sorted({d.class_id for d in detections}):
        class_dets = [d for d in detections if d.class_id == class_id]
        tracklets: Optional[List[Tracklet]] = None
        for level_idx, windows in enumerate(level_windows):
            if level_idx == 0 and level1_cache is not None and class_id in level1_cache:
                graph = level1_cache[class_id]
            else:
                if tracklets is None:
                    tracklets = singleton_tracklets(class_dets, table)
                graph = _level_union(tracklets, level_idx, windows, clip_start, config)

            if with_labels or oracle:
                if graph.labels is None:
                    assign_edge_labels(graph)
            cache = None
            if oracle:
                graph.scores = graph.labels.astype(np.float64)
            else:
                cache = forward(graph, level_idx, params, config)
                graph.scores = cache.scores
            decisions, stats = round_scores(graph.edges, graph.num_nodes, graph.scores)
            nodes_total += stats.num_nodes
            violating_total += stats.num_violating_nodes
            tracklets = merge_tracklets(graph, decisions, table)
            levels[level_idx].graphs.append(graph)
            levels[level_idx].caches.append(cache if collect_caches else None)
        final.extend(tracklets)

    final.sort(key=lambda t: (t.t_start, t.t_end, t.first.box))
    return ClipRun(
        levels=levels,
        tracklets=final,
        nodes_total=nodes_total,
        violating_nodes_total=violating_total,
    )
