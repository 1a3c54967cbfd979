"""Per-level association graphs: clip partition, KNN edge pruning, labels, merging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import EmbeddingTable, HierarchyConfig, HiertrackError, Tracklet, merge_tracklet_chain
from .features import FEATURE_DIM, appearance_distance, giou_batch, motion_consistency

Window = Tuple[int, int]  # [start, end) in frames


def partition_clip(clip_start: int, clip_length: int, config: HierarchyConfig) -> List[List[Window]]:
    """Non-overlapping windows per level; boundaries of level l+1 align with level l.

    Clips that are not a multiple of a level's window size get a truncated
    final window at that level.
    """
    levels = []
    for size in config.level_window_sizes:
        windows = []
        start = clip_start
        end = clip_start + clip_length
        while start < end:
            windows.append((start, min(start + size, end)))
            start += size
        levels.append(windows)
    return levels


@dataclass
class AssociationGraph:
    """One window's tracklets plus its pruned, feature-annotated edge set.

    Edges are (u_index, v_index) pairs with tracklet u ending strictly
    before tracklet v starts. labels/scores are filled in by their owners
    (labeling and scoring respectively); everything else is immutable.
    """

    level: int
    window: Window
    nodes: List[Tracklet]
    edges: np.ndarray  # (E, 2) int
    features: np.ndarray  # (E, FEATURE_DIM) float64
    labels: Optional[np.ndarray] = None  # (E,) int
    scores: Optional[np.ndarray] = None  # (E,) float64

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])


def _center_distance(u: Tracklet, v: Tracklet) -> float:
    cu = np.array(u.last.center)
    cv = np.array(v.first.center)
    return float(np.linalg.norm(cu - cv))


def pruning_distance(u: Tracklet, v: Tracklet, level: int, config: HierarchyConfig) -> float:
    """Distance used to keep only each node's nearest association candidates.

    Level 1 uses the plain center distance of the temporally closest
    detections. Higher levels mix appearance and motion:
    lambda * d_app + (1 - lambda) * (1 - motion_giou), falling back to a
    size-normalized center distance when a velocity is missing.
    """
    if u.t_end >= v.t_start:
        u, v = v, u
    if level == 1:
        return _center_distance(u, v)
    lam = config.lambda_mix
    d_app = appearance_distance(u, v)
    motion = motion_consistency(u, v)
    if motion is None:
        half_heights = (u.last.box[3] + v.first.box[3]) / 2.0
        d_motion = _center_distance(u, v) / half_heights
    else:
        d_motion = 1.0 - motion
    return lam * d_app + (1.0 - lam) * d_motion


class _NodeArrays:
    """Column view of a window's tracklets for vectorized graph construction."""

    def __init__(self, nodes: Sequence[Tracklet]):
        n = len(nodes)
        self.starts = np.array([t.t_start for t in nodes], dtype=np.float64)
        self.ends = np.array([t.t_end for t in nodes], dtype=np.float64)
        self.first_box = np.array([t.first.box for t in nodes], dtype=np.float64).reshape(n, 4)
        self.last_box = np.array([t.last.box for t in nodes], dtype=np.float64).reshape(n, 4)
        if n:
            self.emb = np.stack([t.avg_embedding for t in nodes])
        else:
            self.emb = np.zeros((0, 0))
        self.vel = np.array(
            [t.velocity if t.velocity is not None else (0.0, 0.0) for t in nodes],
            dtype=np.float64,
        ).reshape(n, 2)
        self.has_vel = np.array([t.velocity is not None for t in nodes], dtype=bool)

    @property
    def first_center(self) -> np.ndarray:
        return self.first_box[:, :2] + self.first_box[:, 2:] / 2.0

    @property
    def last_center(self) -> np.ndarray:
        return self.last_box[:, :2] + self.last_box[:, 2:] / 2.0


def _oriented_distance_matrix(
    arr: _NodeArrays, level: int, config: HierarchyConfig, valid: np.ndarray
) -> np.ndarray:
    """dist[i, j] = pruning distance of the oriented edge i -> j (i ends before
    j starts); only entries flagged in `valid` are filled, the rest stay inf."""
    out = np.full(valid.shape, np.inf, dtype=np.float64)
    i_idx, j_idx = np.nonzero(valid)
    if i_idx.size == 0:
        return out
    lc = arr.last_center[i_idx]
    fc = arr.first_center[j_idx]
    center_dist = np.sqrt(((lc - fc) ** 2).sum(axis=1))
    if level == 1:
        out[i_idx, j_idx] = center_dist
        return out

    d_app = np.sqrt(((arr.emb[i_idx] - arr.emb[j_idx]) ** 2).sum(axis=1))

    t_mid = ((arr.starts[j_idx] - arr.ends[i_idx]) / 2.0)[:, None]
    fwd = arr.last_box[i_idx].copy()
    fwd[:, :2] += t_mid * arr.vel[i_idx]
    bwd = arr.first_box[j_idx].copy()
    bwd[:, :2] -= t_mid * arr.vel[j_idx]
    motion_giou = giou_batch(fwd, bwd)

    half_heights = (arr.last_box[i_idx, 3] + arr.first_box[j_idx, 3]) / 2.0
    fallback = center_dist / half_heights
    both_vel = arr.has_vel[i_idx] & arr.has_vel[j_idx]
    d_motion = np.where(both_vel, 1.0 - motion_giou, fallback)
    out[i_idx, j_idx] = config.lambda_mix * d_app + (1.0 - config.lambda_mix) * d_motion
    return out


def edge_features_batch(
    arr: _NodeArrays, edges: np.ndarray, time_scale: float
) -> np.ndarray:
    """Feature vectors for oriented (u, v) index pairs; matches edge_feature_vector."""
    feats = np.zeros((edges.shape[0], FEATURE_DIM), dtype=np.float64)
    if edges.shape[0] == 0:
        return feats
    u, v = edges[:, 0], edges[:, 1]
    lb, fb = arr.last_box[u], arr.first_box[v]
    hsum = lb[:, 3] + fb[:, 3]
    feats[:, 0] = 2.0 * (lb[:, 0] - fb[:, 0]) / hsum
    feats[:, 1] = 2.0 * (lb[:, 1] - fb[:, 1]) / hsum
    feats[:, 2] = np.log(lb[:, 2] / fb[:, 2])
    feats[:, 3] = np.log(lb[:, 3] / fb[:, 3])
    feats[:, 4] = (arr.starts[v] - arr.ends[u]) / time_scale
    feats[:, 5] = np.linalg.norm(arr.emb[u] - arr.emb[v], axis=1)

    both_vel = arr.has_vel[u] & arr.has_vel[v]
    if both_vel.any():
        t_mid = ((arr.starts[v] - arr.ends[u]) / 2.0)[both_vel, None]
        fwd = lb[both_vel].copy()
        fwd[:, :2] += t_mid * arr.vel[u[both_vel]]
        bwd = fb[both_vel].copy()
        bwd[:, :2] -= t_mid * arr.vel[v[both_vel]]
        feats[both_vel, 6] = giou_batch(fwd, bwd)
        feats[both_vel, 7] = 1.0
    return feats


def build_graph(
    tracklets: Sequence[Tracklet],
    level: int,
    window: Window,
    config: HierarchyConfig,
) -> AssociationGraph:
    """KNN-pruned graph over one window's tracklets.

    Candidates are all temporally disjoint ordered pairs; each node keeps its
    knn_k nearest candidates by pruning_distance and the kept set is the
    union over nodes (an edge survives if either endpoint selects it).
    """
    nodes = list(tracklets)
    n = len(nodes)
    if n < 2:
        return AssociationGraph(
            level=level,
            window=window,
            nodes=nodes,
            edges=np.zeros((0, 2), dtype=np.int64),
            features=np.zeros((0, FEATURE_DIM), dtype=np.float64),
        )

    arr = _NodeArrays(nodes)
    before = arr.ends[:, None] < arr.starts[None, :]
    oriented = _oriented_distance_matrix(arr, level, config, before)

    # symmetric candidate view: row i holds distances to every disjoint partner
    sym = np.minimum(oriented, oriented.T)

    k = min(config.knn_k, n - 1)
    nearest = np.argpartition(sym, k - 1, axis=1)[:, :k]
    selected = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), k)
    selected[rows, nearest.ravel()] = True
    selected &= np.isfinite(sym)

    keep = (selected | selected.T) & before
    edges = np.argwhere(keep).astype(np.int64)

    feats = edge_features_batch(arr, edges, time_scale=float(window[1] - window[0]))
    graph = AssociationGraph(level=level, window=window, nodes=nodes, edges=edges, features=feats)
    if graph.num_edges > 2 * config.knn_k * n:
        raise HiertrackError("edge budget exceeded: KNN union produced too many edges")
    return graph


def union_graphs(graphs: Sequence[AssociationGraph]) -> AssociationGraph:
    """Disjoint union of same-level window graphs into one graph.

    Windows never share edges and their node order respects time order, so
    labeling, rounding, and merging on the union are equivalent to running
    them window by window; message passing treats components independently
    by construction.
    """
    if not graphs:
        raise HiertrackError("cannot union an empty graph list")
    level = graphs[0].level
    if any(g.level != level for g in graphs):
        raise HiertrackError("cannot union graphs from different levels")
    nodes: List[Tracklet] = []
    edge_parts = []
    feat_parts = []
    offset = 0
    for g in graphs:
        nodes.extend(g.nodes)
        if g.num_edges:
            edge_parts.append(g.edges + offset)
            feat_parts.append(g.features)
        offset += g.num_nodes
    edges = np.vstack(edge_parts) if edge_parts else np.zeros((0, 2), dtype=np.int64)
    feats = np.vstack(feat_parts) if feat_parts else np.zeros((0, FEATURE_DIM), dtype=np.float64)
    window = (min(g.window[0] for g in graphs), max(g.window[1] for g in graphs))
    return AssociationGraph(level=level, window=window, nodes=nodes, edges=edges, features=feats)


def assign_edge_labels(graph: AssociationGraph) -> np.ndarray:
    """Binary edge labels: 1 iff both nodes share a gt identity and v is the
    temporally next node of that identity present in this graph after u.

    Nodes with mixed or missing identities never receive positive labels.
    """
    identities = [t.identity() for t in graph.nodes]
    by_identity: Dict[int, List[int]] = {}
    for idx, ident in enumerate(identities):
        if ident is not None:
            by_identity.setdefault(ident, []).append(idx)

    consecutive = []
    for members in by_identity.values():
        members.sort(key=lambda i: (graph.nodes[i].t_start, graph.nodes[i].t_end, i))
        consecutive.extend(zip(members, members[1:]))

    labels = np.zeros(graph.num_edges, dtype=np.int64)
    if consecutive and graph.num_edges:
        n = graph.num_nodes
        consec_keys = np.array([a * n + b for a, b in consecutive], dtype=np.int64)
        edge_keys = graph.edges[:, 0] * n + graph.edges[:, 1]
        labels[np.isin(edge_keys, consec_keys)] = 1
    graph.labels = labels
    return labels


def merge_tracklets(
    graph: AssociationGraph,
    decisions: np.ndarray,
    embeddings: EmbeddingTable,
) -> List[Tracklet]:
    """Merge nodes along selected edges into longer tracklets.

    decisions must satisfy the flow constraints (at most one selected past
    and one selected future edge per node); selected edges then form
    time-monotone chains. Unselected nodes pass through unchanged.
    """
    decisions = np.asarray(decisions)
    if decisions.shape[0] != graph.num_edges:
        raise HiertrackError("decision vector does not align with the edge list")
    successor = np.full(graph.num_nodes, -1, dtype=np.int64)
    has_predecessor = np.zeros(graph.num_nodes, dtype=bool)
    for row, (u_idx, v_idx) in enumerate(graph.edges):
        if not decisions[row]:
            continue
        u_idx, v_idx = int(u_idx), int(v_idx)
        if successor[u_idx] != -1 or has_predecessor[v_idx]:
            raise HiertrackError("infeasible decisions: a node exceeds its degree budget")
        successor[u_idx] = v_idx
        has_predecessor[v_idx] = True

    merged: List[Tracklet] = []
    for start in range(graph.num_nodes):
        if has_predecessor[start]:
            continue
        chain = [graph.nodes[start]]
        cur = start
        while successor[cur] != -1:
            cur = int(successor[cur])
            chain.append(graph.nodes[cur])
        if len(chain) == 1:
            merged.append(chain[0])
        else:
            merged.append(merge_tracklet_chain(chain, embeddings))
    merged.sort(key=lambda t: (t.t_start, t.t_end, t.first.box))
    return merged
