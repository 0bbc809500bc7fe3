"""Reverse-mode gradients through the forward trace.

Hand-derived backprop for the propagation layers (attention softmax,
message weights, ReLU, LayerNorm), the GRU step, and the softplus
readout. The previous hidden state is treated as a constant input, so
no gradient flows across time steps.
"""

from __future__ import annotations

import numpy as np

from .forward import ForwardTrace
from .model import GnnModel, GraphTensors, parameter_shapes
from .ops import sigmoid


def backward(
    model: GnnModel,
    graph: GraphTensors,
    trace: ForwardTrace,
    dpred: np.ndarray,
) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss wrt every parameter, given dloss/dpred.

    ``dpred`` has one entry per edge (zero where an edge does not appear
    in the loss).
    """
    cfg = model.cfg
    p = model.params
    src = graph.ends[:, 0]
    dst = graph.ends[:, 1]
    n = graph.num_nodes
    d = cfg.hidden_dim

    grads = {k: np.zeros(shape) for k, shape in parameter_shapes(cfg).items()}

    # readout: pred = fft * (1 + softplus(score))
    dscore = dpred * graph.free_flow * sigmoid(trace.readout_score)
    grads["readout.weight"] = trace.readout_in.T @ dscore
    grads["readout.bias"] = np.array([dscore.sum()])
    w_out = p["readout.weight"]
    dh_new = np.zeros((n, d))
    dcat = dscore[:, None] * w_out[None, :]
    np.add.at(dh_new, src, dcat[:, :d])
    np.add.at(dh_new, dst, dcat[:, d:])

    # GRU: h_new = (1-z) h_prev + z cand
    g = trace.gnn_out
    h_prev = trace.h_prev
    z, r, cand = trace.z, trace.r, trace.cand
    dz = dh_new * (cand - h_prev)
    dcand = dh_new * z
    dcand_pre = dcand * (1.0 - cand**2)
    grads["gru.w_h"] = dcand_pre.T @ g
    grads["gru.u_h"] = dcand_pre.T @ (r * h_prev)
    grads["gru.b_h"] = dcand_pre.sum(axis=0)
    dg = dcand_pre @ p["gru.w_h"]
    dr = (dcand_pre @ p["gru.u_h"]) * h_prev
    dr_pre = dr * r * (1.0 - r)
    grads["gru.w_r"] = dr_pre.T @ g
    grads["gru.u_r"] = dr_pre.T @ h_prev
    grads["gru.b_r"] = dr_pre.sum(axis=0)
    dg += dr_pre @ p["gru.w_r"]
    dz_pre = dz * z * (1.0 - z)
    grads["gru.w_z"] = dz_pre.T @ g
    grads["gru.u_z"] = dz_pre.T @ h_prev
    grads["gru.b_z"] = dz_pre.sum(axis=0)
    dg += dz_pre @ p["gru.w_z"]

    dh = dg
    for layer in reversed(range(cfg.num_layers)):
        tr = trace.layers[layer]
        w = cfg.layer_input_dim(layer)
        w_msg = p[f"layer{layer}.w_msg"]
        w_self = p[f"layer{layer}.w_self"]
        w_neigh = p[f"layer{layer}.w_neigh"]
        attn = p[f"layer{layer}.attn"]

        dxhat = dh if tr.drop_mask is None else dh * tr.drop_mask

        # LayerNorm (no affine): dr = inv_std*(dy - mean(dy) - xhat*mean(dy*xhat))
        row_mean = dxhat.mean(axis=1, keepdims=True)
        row_proj = (dxhat * tr.xhat).mean(axis=1, keepdims=True)
        drelu = tr.inv_std * (dxhat - row_mean - tr.xhat * row_proj)
        dpre = drelu * (tr.pre > 0.0)

        grads[f"layer{layer}.w_self"] = dpre.T @ tr.h_in
        dh_in = dpre @ w_self
        grads[f"layer{layer}.w_neigh"] = dpre.T @ tr.m
        dm = dpre @ w_neigh

        dmessages = tr.alpha[:, None] * dm[dst]
        if cfg.aggregator == "attention":
            dalpha = np.einsum("ed,ed->e", tr.messages, dm[dst])
            s_node = np.zeros(n)
            np.add.at(s_node, dst, tr.alpha * dalpha)
            dscores = tr.alpha * (dalpha - s_node[dst])
            draw = dscores * np.where(tr.raw_scores > 0.0, 1.0, cfg.leaky_slope)
            cat2 = np.concatenate([tr.h_in[src], tr.h_in[dst]], axis=1)
            grads[f"layer{layer}.attn"] = cat2.T @ draw
            np.add.at(dh_in, src, draw[:, None] * attn[None, :w])
            np.add.at(dh_in, dst, draw[:, None] * attn[None, w:])

        cat3 = np.concatenate([tr.h_in[src], tr.h_in[dst], graph.edge_attr], axis=1)
        grads[f"layer{layer}.w_msg"] = dmessages.T @ cat3
        dcat3 = dmessages @ w_msg
        np.add.at(dh_in, src, dcat3[:, :w])
        np.add.at(dh_in, dst, dcat3[:, w : 2 * w])

        dh = dh_in

    return grads
