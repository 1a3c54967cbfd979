"""Rounding edge scores into feasible binary association decisions.

Feasibility means every node keeps at most one selected edge toward the
past and at most one toward the future. Scores are thresholded first;
only the subgraph that violates a degree constraint is re-solved, exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import HiertrackError


def threshold_edges(scores: np.ndarray) -> np.ndarray:
    """Tentative decisions: select an edge iff its score is strictly above 0.5."""
    return np.asarray(scores) > 0.5


def _degree_counts(edges: np.ndarray, n_nodes: int, selected: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per node: (# selected future edges, # selected past edges)."""
    future = np.zeros(n_nodes, dtype=np.int64)
    past = np.zeros(n_nodes, dtype=np.int64)
    if edges.shape[0]:
        sel = edges[np.asarray(selected, dtype=bool)]
        np.add.at(future, sel[:, 0], 1)
        np.add.at(past, sel[:, 1], 1)
    return future, past


def find_violations(
    edges: np.ndarray, n_nodes: int, tentative: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes exceeding a degree budget, plus the selected edges incident to them.

    Returns (violating node indices, indices into the edge list).
    """
    tentative = np.asarray(tentative, dtype=bool)
    future, past = _degree_counts(edges, n_nodes, tentative)
    bad_nodes = np.flatnonzero((future > 1) | (past > 1))
    if bad_nodes.size == 0:
        return bad_nodes, np.zeros(0, dtype=np.int64)
    bad = np.zeros(n_nodes, dtype=bool)
    bad[bad_nodes] = True
    incident = tentative & (bad[edges[:, 0]] | bad[edges[:, 1]])
    return bad_nodes, np.flatnonzero(incident)


def project_feasible(edges: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Closest feasible binary decisions on a violating subgraph.

    Minimizes sum(y * (1 - 2 * score)) subject to the per-node degree
    constraints, i.e. keeps a maximum-weight set of edges with weights
    2 * score - 1, dropping non-positive-weight edges. The constraint
    structure is an assignment between each node's future slot and each
    node's past slot, so a max-weight bipartite matching is exact.
    """
    edges = np.asarray(edges).reshape(-1, 2)
    scores = np.asarray(scores, dtype=np.float64)
    decisions = np.zeros(edges.shape[0], dtype=bool)
    weights = 2.0 * scores - 1.0
    usable = np.flatnonzero(weights > 0)
    if usable.size == 0:
        return decisions

    out_nodes = {int(n): i for i, n in enumerate(np.unique(edges[usable, 0]))}
    in_nodes = {int(n): i for i, n in enumerate(np.unique(edges[usable, 1]))}
    weight_matrix = np.zeros((len(out_nodes), len(in_nodes)), dtype=np.float64)
    edge_at = -np.ones((len(out_nodes), len(in_nodes)), dtype=np.int64)
    for idx in usable:
        r = out_nodes[int(edges[idx, 0])]
        c = in_nodes[int(edges[idx, 1])]
        # duplicate (u, v) rows: keep the heaviest, others can never win
        if weights[idx] > weight_matrix[r, c]:
            weight_matrix[r, c] = weights[idx]
            edge_at[r, c] = idx

    rows, cols = linear_sum_assignment(weight_matrix, maximize=True)
    for r, c in zip(rows, cols):
        if weight_matrix[r, c] > 0:
            decisions[edge_at[r, c]] = True
    return decisions


@dataclass
class RoundingStats:
    """How much of the thresholded solution was already feasible."""

    num_nodes: int
    num_violating_nodes: int

    @property
    def feasible_fraction(self) -> float:
        if self.num_nodes == 0:
            return 1.0
        return 1.0 - self.num_violating_nodes / self.num_nodes


def round_scores(
    edges: np.ndarray, n_nodes: int, scores: np.ndarray
) -> Tuple[np.ndarray, RoundingStats]:
    """Threshold scores, then exactly re-solve the violating subgraph.

    The returned decisions satisfy both degree constraints at every node;
    edges outside the violating subgraph keep their thresholded value.
    """
    edges = np.asarray(edges).reshape(-1, 2)
    decisions = threshold_edges(scores)
    bad_nodes, bad_edge_idx = find_violations(edges, n_nodes, decisions)
    stats = RoundingStats(num_nodes=n_nodes, num_violating_nodes=int(bad_nodes.size))
    if bad_edge_idx.size:
        decisions = decisions.copy()
        decisions[bad_edge_idx] = project_feasible(edges[bad_edge_idx], np.asarray(scores)[bad_edge_idx])
    future, past = _degree_counts(edges, n_nodes, decisions)
    if (future > 1).any() or (past > 1).any():
        raise HiertrackError("rounding failed to restore feasibility")
    return decisions, stats


def check_feasible(edges: np.ndarray, n_nodes: int, decisions: np.ndarray) -> bool:
    future, past = _degree_counts(edges, n_nodes, np.asarray(decisions, dtype=bool))
    return bool((future <= 1).all() and (past <= 1).all())
