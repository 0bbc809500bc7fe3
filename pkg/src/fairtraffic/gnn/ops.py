"""Single-node message-passing primitives.

These are the per-node building blocks of one propagation layer. The
batched forward pass in :mod:`fairtraffic.gnn.forward` vectorizes the
same arithmetic over all edges; tests cross-check the two paths.
"""

from __future__ import annotations

import numpy as np

from ..errors import LengthMismatchError, NoNeighborsError, WidthMismatchError


def init_embeddings(obs: np.ndarray, static: np.ndarray, expected_dim: int | None = None) -> np.ndarray:
    """Initial node embedding: concatenation of observed and static features."""
    h0 = np.concatenate([np.asarray(obs, dtype=float), np.asarray(static, dtype=float)])
    if expected_dim is not None and h0.shape[0] != expected_dim:
        raise WidthMismatchError(f"initial embedding width {h0.shape[0]} != {expected_dim}")
    return h0


def message(h_u: np.ndarray, h_v: np.ndarray, e_uv: np.ndarray, w_msg: np.ndarray) -> np.ndarray:
    """Edge message: w_msg @ [h_u; h_v; e_uv]."""
    cat = np.concatenate([h_u, h_v, e_uv])
    if w_msg.shape[1] != cat.shape[0]:
        raise WidthMismatchError(
            f"message weight expects width {w_msg.shape[1]}, got {cat.shape[0]}"
        )
    return w_msg @ cat


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0.0, x, slope * x)


def attention_weights(
    h_v: np.ndarray,
    neighbor_hs: list[np.ndarray],
    attn: np.ndarray,
    slope: float = 0.2,
) -> np.ndarray:
    """Softmax attention over the neighbors of a center node.

    Scores are LeakyReLU(attn . [h_u; h_v]) for each neighbor u; the
    softmax is shift-stabilized.

    Raises:
        NoNeighborsError: empty neighbor list.
    """
    if not neighbor_hs:
        raise NoNeighborsError("attention needs at least one neighbor")
    scores = []
    for h_u in neighbor_hs:
        cat = np.concatenate([h_u, h_v])
        if attn.shape[0] != cat.shape[0]:
            raise WidthMismatchError(
                f"attention vector expects width {attn.shape[0]}, got {cat.shape[0]}"
            )
        scores.append(float(leaky_relu(np.array([attn @ cat]), slope)[0]))
    scores = np.array(scores)
    ex = np.exp(scores - scores.max())
    return ex / ex.sum()


def aggregate(messages: list[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Attention-weighted sum of neighbor messages."""
    if len(messages) != len(weights):
        raise LengthMismatchError("one weight per message required")
    out = np.zeros_like(messages[0])
    for m, w in zip(messages, weights):
        out = out + w * m
    return out


def layer_norm(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Per-vector normalization, no learned affine. Zero maps to zero."""
    mu = x.mean()
    var = ((x - mu) ** 2).mean()
    return (x - mu) / np.sqrt(var + eps)


def update_node(
    h_v: np.ndarray,
    m_v: np.ndarray,
    w_self: np.ndarray,
    w_neigh: np.ndarray,
    eps: float = 1e-5,
) -> np.ndarray:
    """Node update: LayerNorm(ReLU(w_self h_v + w_neigh m_v))."""
    if w_self.shape[1] != h_v.shape[0]:
        raise WidthMismatchError(f"w_self expects width {w_self.shape[1]}, got {h_v.shape[0]}")
    if w_neigh.shape[1] != m_v.shape[0]:
        raise WidthMismatchError(f"w_neigh expects width {w_neigh.shape[1]}, got {m_v.shape[0]}")
    pre = w_self @ h_v + w_neigh @ m_v
    return layer_norm(np.maximum(pre, 0.0), eps)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_step(h_prev: np.ndarray, x: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Standard GRU cell: h = (1-z) h_prev + z tanh-candidate.

    ``params`` holds gru.w_*/u_*/b_* for gates z, r, h.
    """
    d = h_prev.shape[0]
    if x.shape[0] != d:
        raise WidthMismatchError(f"GRU input width {x.shape[0]} != hidden width {d}")
    z = sigmoid(params["gru.w_z"] @ x + params["gru.u_z"] @ h_prev + params["gru.b_z"])
    r = sigmoid(params["gru.w_r"] @ x + params["gru.u_r"] @ h_prev + params["gru.b_r"])
    cand = np.tanh(params["gru.w_h"] @ x + params["gru.u_h"] @ (r * h_prev) + params["gru.b_h"])
    return (1.0 - z) * h_prev + z * cand


def softplus(x: np.ndarray) -> np.ndarray:
    """Numerically stable log(1 + exp(x))."""
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
