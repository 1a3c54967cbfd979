"""Time-aware message-passing network over association graphs.

One parameter set is shared by every hierarchy level; levels are told apart
only through a learned per-level embedding added to the initial edge
encoding (and through level-normalized input features). Reverse-mode
gradients are implemented exactly for this architecture; there is no
generic autodiff.

All arithmetic is float64 so that gradient checks against central finite
differences hold tightly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .core import HierarchyConfig, HiertrackError
from .features import FEATURE_DIM
from .graph import AssociationGraph


@dataclass
class Mlp:
    """Affine layers with ReLU between them; the final layer is linear."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]


def mlp_init(rng: np.random.Generator, dims: List[int]) -> Mlp:
    """Weights uniform with fan-in scaling, U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    biases start at zero so no ReLU layer is born dead."""
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return Mlp(weights, biases)


def mlp_zeros_like(mlp: Mlp) -> Mlp:
    return Mlp([np.zeros_like(w) for w in mlp.weights], [np.zeros_like(b) for b in mlp.biases])


MlpCache = Tuple[List[np.ndarray], List[np.ndarray]]  # per-layer inputs, pre-activations


def mlp_forward(mlp: Mlp, x: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    if x.shape[1] != mlp.in_dim:
        raise HiertrackError(f"MLP expects input width {mlp.in_dim}, got {x.shape[1]}")
    inputs, pres = [], []
    h = x
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(h)
        z = h @ w + b
        pres.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return h, (inputs, pres)


def mlp_backward(mlp: Mlp, cache: MlpCache, d_out: np.ndarray, grads: Mlp) -> np.ndarray:
    """Accumulates parameter gradients into grads; returns gradient w.r.t. x."""
    inputs, pres = cache
    last = len(mlp.weights) - 1
    d = d_out
    for i in range(last, -1, -1):
        if i < last:
            d = d * (pres[i] > 0)
        grads.weights[i] += inputs[i].T @ d
        grads.biases[i] += d.sum(axis=0)
        d = d @ mlp.weights[i].T
    return d


@dataclass
class ModelParams:
    """All trainable state: five shared MLPs plus per-level embeddings."""

    edge_init: Mlp
    level_embed: np.ndarray  # (num_levels, edge_dim)
    edge: Mlp
    past: Mlp
    future: Mlp
    node: Mlp
    classifier: Mlp

    def items(self) -> Iterator[Tuple[str, np.ndarray]]:
        """All parameter tensors in a fixed, declared order."""
        for name in ("edge_init", "edge", "past", "future", "node", "classifier"):
            mlp: Mlp = getattr(self, name)
            for i, w in enumerate(mlp.weights):
                yield f"{name}.w{i}", w
            for i, b in enumerate(mlp.biases):
                yield f"{name}.b{i}", b
        yield "level_embed", self.level_embed

    def num_parameters(self) -> int:
        return sum(int(np.prod(t.shape)) for _, t in self.items())


def init_params(config: HierarchyConfig, seed: int) -> ModelParams:
    """Seeded, reproducible initialization; level embeddings start at zero."""
    rng = np.random.default_rng(seed)
    d_v, d_e = config.node_dim, config.edge_dim
    pair = 2 * d_v + 2 * d_e
    return ModelParams(
        edge_init=mlp_init(rng, [FEATURE_DIM, config.hidden_edge_init, d_e]),
        level_embed=np.zeros((config.num_levels, d_e), dtype=np.float64),
        edge=mlp_init(rng, [pair, config.hidden_edge, d_e]),
        past=mlp_init(rng, [pair, config.hidden_msg, d_v]),
        future=mlp_init(rng, [pair, config.hidden_msg, d_v]),
        node=mlp_init(rng, [2 * d_v, config.hidden_node, d_v]),
        classifier=mlp_init(rng, [d_e, config.hidden_class, 1]),
    )


def zeros_like_params(params: ModelParams) -> ModelParams:
    return ModelParams(
        edge_init=mlp_zeros_like(params.edge_init),
        level_embed=np.zeros_like(params.level_embed),
        edge=mlp_zeros_like(params.edge),
        past=mlp_zeros_like(params.past),
        future=mlp_zeros_like(params.future),
        node=mlp_zeros_like(params.node),
        classifier=mlp_zeros_like(params.classifier),
    )


def _scatter_add(out: np.ndarray, idx: np.ndarray, values: np.ndarray) -> None:
    """out[idx[r]] += values[r], deterministic and much faster than np.add.at."""
    if idx.size == 0:
        return
    n = out.shape[0]
    for c in range(values.shape[1]):
        out[:, c] += np.bincount(idx, weights=values[:, c], minlength=n)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class StepCache:
    edge_cache: MlpCache
    past_cache: MlpCache
    future_cache: MlpCache
    node_cache: MlpCache


@dataclass
class ForwardCache:
    """Everything backward() needs; produced by one forward() call."""

    graph: AssociationGraph
    level_index: int
    h_edges: List[np.ndarray] = field(default_factory=list)  # h^(0) .. h^(S)
    h_nodes: List[np.ndarray] = field(default_factory=list)
    init_cache: Optional[MlpCache] = None
    steps: List[StepCache] = field(default_factory=list)
    class_cache: Optional[MlpCache] = None
    logits: Optional[np.ndarray] = None
    scores: Optional[np.ndarray] = None


def init_edge_embeddings(
    graph: AssociationGraph, level_index: int, params: ModelParams
) -> Tuple[np.ndarray, MlpCache]:
    """h^(0) per edge: encoded features plus the level embedding."""
    if not 0 <= level_index < params.level_embed.shape[0]:
        raise HiertrackError(f"level index {level_index} outside embedding table")
    encoded, cache = mlp_forward(params.edge_init, graph.features)
    return encoded + params.level_embed[level_index], cache


def _edge_input(h_a, h_e, h_e0, h_b) -> np.ndarray:
    return np.hstack([h_a, h_e, h_e0, h_b])


def message_passing_step(
    h_v: np.ndarray,
    h_e: np.ndarray,
    h_e0: np.ndarray,
    edges: np.ndarray,
    params: ModelParams,
) -> Tuple[np.ndarray, np.ndarray, StepCache]:
    """One edge update, directional message computation, and node update.

    For an edge (u, v) with u temporally first, the message into v goes
    through the past-MLP (its sender lies in v's past) and the message into
    u through the future-MLP; per-node sums of the two families feed the
    node update, with empty sums contributing zero vectors.
    """
    a, b = edges[:, 0], edges[:, 1]
    d_v = h_v.shape[1]

    x_edge = _edge_input(h_v[a], h_e, h_e0, h_v[b])
    h_e_new, edge_cache = mlp_forward(params.edge, x_edge)

    x_past = _edge_input(h_v[a], h_e_new, h_e0, h_v[b])
    m_past, past_cache = mlp_forward(params.past, x_past)
    x_future = _edge_input(h_v[b], h_e_new, h_e0, h_v[a])
    m_future, future_cache = mlp_forward(params.future, x_future)

    past_agg = np.zeros((h_v.shape[0], d_v), dtype=np.float64)
    future_agg = np.zeros((h_v.shape[0], d_v), dtype=np.float64)
    _scatter_add(past_agg, b, m_past)
    _scatter_add(future_agg, a, m_future)

    h_v_new, node_cache = mlp_forward(params.node, np.hstack([past_agg, future_agg]))
    return h_v_new, h_e_new, StepCache(edge_cache, past_cache, future_cache, node_cache)


def classify_edges(h_e_final: np.ndarray, params: ModelParams) -> Tuple[np.ndarray, np.ndarray, MlpCache]:
    logits, cache = mlp_forward(params.classifier, h_e_final)
    logits = logits[:, 0]
    return sigmoid(logits), logits, cache


def forward(
    graph: AssociationGraph,
    level_index: int,
    params: ModelParams,
    config: HierarchyConfig,
) -> ForwardCache:
    """Initial encoding, S message-passing rounds, and edge classification."""
    cache = ForwardCache(graph=graph, level_index=level_index)
    h_e0, cache.init_cache = init_edge_embeddings(graph, level_index, params)
    h_v = np.zeros((graph.num_nodes, config.node_dim), dtype=np.float64)
    cache.h_edges.append(h_e0)
    cache.h_nodes.append(h_v)

    h_e = h_e0
    for _ in range(config.message_passing_steps):
        h_v, h_e, step_cache = message_passing_step(h_v, h_e, h_e0, graph.edges, params)
        cache.steps.append(step_cache)
        cache.h_edges.append(h_e)
        cache.h_nodes.append(h_v)

    cache.scores, cache.logits, cache.class_cache = classify_edges(h_e, params)
    return cache


def _split_pair_input(d: np.ndarray, d_v: int, d_e: int):
    """Reverse of _edge_input: (first node, current edge, initial edge, second node)."""
    return (
        d[:, :d_v],
        d[:, d_v : d_v + d_e],
        d[:, d_v + d_e : d_v + 2 * d_e],
        d[:, d_v + 2 * d_e :],
    )


def backward(
    cache: ForwardCache,
    params: ModelParams,
    d_scores: np.ndarray,
    grads: ModelParams,
) -> None:
    """Exact reverse-mode gradients for a scalar loss with upstream d(loss)/d(score).

    Accumulates into grads (a zeros_like_params() structure), including the
    level embedding of the graph's level.
    """
    if cache.logits is None or cache.scores is None:
        raise HiertrackError("backward called before forward completed")
    graph = cache.graph
    edges = graph.edges
    a, b = edges[:, 0], edges[:, 1]
    d_v = cache.h_nodes[0].shape[1]
    d_e = cache.h_edges[0].shape[1]
    n_steps = len(cache.steps)

    d_logits = np.asarray(d_scores, dtype=np.float64) * cache.scores * (1.0 - cache.scores)
    d_h_e = mlp_backward(params.classifier, cache.class_cache, d_logits[:, None], grads.classifier)
    d_h_v = np.zeros((graph.num_nodes, d_v), dtype=np.float64)
    d_h_e0 = np.zeros((graph.num_edges, d_e), dtype=np.float64)

    for s in range(n_steps - 1, -1, -1):
        step = cache.steps[s]
        h_prev_nodes = cache.h_nodes[s]

        # node update
        d_x_node = mlp_backward(params.node, step.node_cache, d_h_v, grads.node)
        d_past_agg = d_x_node[:, :d_v]
        d_future_agg = d_x_node[:, d_v:]
        d_m_past = d_past_agg[b]
        d_m_future = d_future_agg[a]

        d_h_v_prev = np.zeros_like(h_prev_nodes)
        d_h_e_cur = d_h_e  # gradient w.r.t. h^(s), accumulated below

        # messages consume [sender, h^(s), h^(0), receiver]
        d_x_past = mlp_backward(params.past, step.past_cache, d_m_past, grads.past)
        g_a, g_e, g_e0, g_b = _split_pair_input(d_x_past, d_v, d_e)
        _scatter_add(d_h_v_prev, a, g_a)
        _scatter_add(d_h_v_prev, b, g_b)
        d_h_e_cur = d_h_e_cur + g_e
        d_h_e0 += g_e0

        d_x_future = mlp_backward(params.future, step.future_cache, d_m_future, grads.future)
        g_b2, g_e2, g_e02, g_a2 = _split_pair_input(d_x_future, d_v, d_e)
        _scatter_add(d_h_v_prev, b, g_b2)
        _scatter_add(d_h_v_prev, a, g_a2)
        d_h_e_cur = d_h_e_cur + g_e2
        d_h_e0 += g_e02

        # edge update consumed [h_a^(s-1), h^(s-1), h^(0), h_b^(s-1)]
        d_x_edge = mlp_backward(params.edge, step.edge_cache, d_h_e_cur, grads.edge)
        g_a3, d_h_e_prev, g_e03, g_b3 = _split_pair_input(d_x_edge, d_v, d_e)
        _scatter_add(d_h_v_prev, a, g_a3)
        _scatter_add(d_h_v_prev, b, g_b3)
        d_h_e0 += g_e03

        d_h_e = d_h_e_prev
        d_h_v = d_h_v_prev

    # h^(0) is both the s=0 edge state and the skip input at every step
    d_h_e0 += d_h_e
    grads.level_embed[cache.level_index] += d_h_e0.sum(axis=0)
    mlp_backward(params.edge_init, cache.init_cache, d_h_e0, grads.edge_init)
