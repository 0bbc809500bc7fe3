"""Graph neural network for edge travel-time prediction."""

from .backward import backward
from .forward import ForwardTrace, initial_hidden, predict_edge_times, run_forward
from .model import (
    GnnConfig,
    GnnModel,
    GraphTensors,
    ModelGradient,
    graph_tensors,
    induced_subnetwork,
    init_params,
    parameter_shapes,
    tree_add,
    tree_copy,
    tree_flatten,
    tree_norm,
    tree_param_count,
    tree_same_shape,
    tree_scale,
    tree_sub,
    tree_unflatten,
    tree_zeros_like,
)
from .ops import (
    aggregate,
    attention_weights,
    gru_step,
    init_embeddings,
    layer_norm,
    leaky_relu,
    message,
    sigmoid,
    softplus,
    update_node,
)
from .train import TrainingSample, local_train, loss_and_gradient

__all__ = [
    "GnnConfig",
    "GnnModel",
    "GraphTensors",
    "ModelGradient",
    "ForwardTrace",
    "TrainingSample",
    "aggregate",
    "attention_weights",
    "backward",
    "graph_tensors",
    "gru_step",
    "induced_subnetwork",
    "init_embeddings",
    "init_params",
    "initial_hidden",
    "layer_norm",
    "leaky_relu",
    "local_train",
    "loss_and_gradient",
    "message",
    "parameter_shapes",
    "predict_edge_times",
    "run_forward",
    "sigmoid",
    "softplus",
    "tree_add",
    "tree_copy",
    "tree_flatten",
    "tree_norm",
    "tree_param_count",
    "tree_same_shape",
    "tree_scale",
    "tree_sub",
    "tree_unflatten",
    "tree_zeros_like",
    "update_node",
]
