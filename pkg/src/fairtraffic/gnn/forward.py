"""Vectorized forward pass over a graph, with a trace for backprop.

The layer arithmetic mirrors the per-node primitives in ``ops`` but runs
over all edges at once with gather/scatter indexing. Edge travel-time
predictions come from a linear readout over the endpoint embeddings,
passed through softplus so they always exceed the free-flow time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import WidthMismatchError
from .model import GnnModel, GraphTensors
from .ops import sigmoid, softplus


@dataclass
class LayerTrace:
    h_in: np.ndarray
    raw_scores: np.ndarray
    alpha: np.ndarray
    messages: np.ndarray
    m: np.ndarray
    pre: np.ndarray
    inv_std: np.ndarray
    xhat: np.ndarray
    drop_mask: np.ndarray | None


@dataclass
class ForwardTrace:
    layers: list[LayerTrace]
    gnn_out: np.ndarray
    h_prev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    cand: np.ndarray
    h_new: np.ndarray
    readout_in: np.ndarray
    readout_score: np.ndarray
    preds: np.ndarray


def _layer_forward(
    model: GnnModel,
    graph: GraphTensors,
    h: np.ndarray,
    layer: int,
    drop_mask: np.ndarray | None,
) -> tuple[np.ndarray, LayerTrace]:
    cfg = model.cfg
    p = model.params
    src = graph.ends[:, 0]
    dst = graph.ends[:, 1]
    n, e = graph.num_nodes, graph.num_edges
    d = cfg.hidden_dim

    attn = p[f"layer{layer}.attn"]
    w_msg = p[f"layer{layer}.w_msg"]
    w_self = p[f"layer{layer}.w_self"]
    w_neigh = p[f"layer{layer}.w_neigh"]

    cat2 = np.concatenate([h[src], h[dst]], axis=1)
    raw = cat2 @ attn
    if cfg.aggregator == "attention":
        scores = np.where(raw > 0.0, raw, cfg.leaky_slope * raw)
        mx = np.full(n, -np.inf)
        np.maximum.at(mx, dst, scores)
        ex = np.exp(scores - mx[dst]) if e else np.zeros(0)
        denom = np.zeros(n)
        np.add.at(denom, dst, ex)
        alpha = ex / denom[dst] if e else ex
    else:  # mean aggregation (ablation mode)
        count = np.zeros(n)
        np.add.at(count, dst, 1.0)
        alpha = 1.0 / count[dst] if e else np.zeros(0)

    cat3 = np.concatenate([h[src], h[dst], graph.edge_attr], axis=1)
    messages = cat3 @ w_msg.T
    m = np.zeros((n, d))
    np.add.at(m, dst, alpha[:, None] * messages)

    pre = h @ w_self.T + m @ w_neigh.T
    relu = np.maximum(pre, 0.0)
    mu = relu.mean(axis=1, keepdims=True)
    var = ((relu - mu) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + cfg.layernorm_eps)
    xhat = (relu - mu) * inv_std

    out = xhat if drop_mask is None else xhat * drop_mask
    return out, LayerTrace(h, raw, alpha, messages, m, pre, inv_std, xhat, drop_mask)


def run_forward(
    model: GnnModel,
    graph: GraphTensors,
    obs: np.ndarray,
    h_prev: np.ndarray,
    training: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> ForwardTrace:
    """Three propagation layers, a GRU step, then the edge readout.

    ``obs`` is (N, obs_dim); ``h_prev`` is the (N, hidden_dim) temporal
    state carried between steps. Dropout masks are drawn from
    ``dropout_rng`` only when ``training`` is set, so evaluation is a
    pure function of (parameters, inputs).
    """
    cfg = model.cfg
    p = model.params
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (graph.num_nodes, cfg.obs_dim):
        raise WidthMismatchError(
            f"obs must be ({graph.num_nodes}, {cfg.obs_dim}), got {obs.shape}"
        )
    if h_prev.shape != (graph.num_nodes, cfg.hidden_dim):
        raise WidthMismatchError(
            f"h_prev must be ({graph.num_nodes}, {cfg.hidden_dim}), got {h_prev.shape}"
        )

    h = np.concatenate([obs, graph.node_static], axis=1)
    if h.shape[1] != cfg.input_dim:
        raise WidthMismatchError(f"input width {h.shape[1]} != {cfg.input_dim}")

    use_dropout = training and cfg.dropout > 0.0
    if use_dropout and dropout_rng is None:
        raise ValueError("training mode with dropout requires a seeded rng")

    layers: list[LayerTrace] = []
    for layer in range(cfg.num_layers):
        mask = None
        if use_dropout:
            keep = 1.0 - cfg.dropout
            mask = (
                dropout_rng.random((graph.num_nodes, cfg.hidden_dim)) < keep
            ).astype(float) / keep
        h, trace = _layer_forward(model, graph, h, layer, mask)
        layers.append(trace)

    gnn_out = h
    z = sigmoid(gnn_out @ p["gru.w_z"].T + h_prev @ p["gru.u_z"].T + p["gru.b_z"])
    r = sigmoid(gnn_out @ p["gru.w_r"].T + h_prev @ p["gru.u_r"].T + p["gru.b_r"])
    cand = np.tanh(
        gnn_out @ p["gru.w_h"].T + (r * h_prev) @ p["gru.u_h"].T + p["gru.b_h"]
    )
    h_new = (1.0 - z) * h_prev + z * cand

    src = graph.ends[:, 0]
    dst = graph.ends[:, 1]
    readout_in = np.concatenate([h_new[src], h_new[dst]], axis=1)
    score = readout_in @ p["readout.weight"] + p["readout.bias"][0]
    preds = graph.free_flow * (1.0 + softplus(score))

    return ForwardTrace(
        layers, gnn_out, h_prev, z, r, cand, h_new, readout_in, score, preds
    )


def predict_edge_times(
    model: GnnModel, graph: GraphTensors, obs: np.ndarray, h_prev: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation-mode forward: (edge travel times in minutes, new hidden state)."""
    trace = run_forward(model, graph, obs, h_prev, training=False)
    return trace.preds, trace.h_new


def initial_hidden(graph: GraphTensors, hidden_dim: int) -> np.ndarray:
    return np.zeros((graph.num_nodes, hidden_dim))
