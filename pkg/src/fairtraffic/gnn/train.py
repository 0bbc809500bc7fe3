"""Training objective and local SGD for one client.

The loss is mean squared error on speeds scaled by 80 mph: predicted
edge travel times are converted back to speeds via the edge length, so
slower-than-observed predictions are penalized symmetrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyBatchError, EmptyDatasetError
from .backward import backward
from .forward import run_forward
from .model import GnnModel, GraphTensors, ModelGradient, tree_scale, tree_sub

SPEED_SCALE_MPH = 80.0


@dataclass
class TrainingSample:
    """One observation snapshot on a client's subgraph."""

    obs: np.ndarray  # (N, obs_dim)
    h_prev: np.ndarray  # (N, hidden_dim)
    target_edges: np.ndarray  # edge indices with observed speeds
    target_speeds: np.ndarray  # mph, aligned with target_edges


def loss_and_gradient(
    model: GnnModel,
    graph: GraphTensors,
    batch: list[TrainingSample],
    training: bool = False,
    dropout_seed: int | list[int] | None = None,
) -> tuple[float, ModelGradient]:
    """Mean loss and mean analytic gradient over the batch.

    Raises:
        EmptyBatchError: the batch has no samples.
    """
    if not batch:
        raise EmptyBatchError("loss requires a non-empty batch")
    rng = None
    if training and model.cfg.dropout > 0.0:
        rng = np.random.default_rng(dropout_seed)

    total_loss = 0.0
    total_grads: dict[str, np.ndarray] | None = None
    for sample in batch:
        trace = run_forward(
            model, graph, sample.obs, sample.h_prev, training=training, dropout_rng=rng
        )
        idx = np.asarray(sample.target_edges, dtype=int)
        if idx.size == 0:
            raise EmptyBatchError("sample has no observed edges")
        preds = trace.preds[idx]
        dist = graph.distance[idx]
        pred_speed = 60.0 * dist / preds
        resid = (pred_speed - sample.target_speeds) / SPEED_SCALE_MPH
        total_loss += float(np.mean(resid**2))

        dpred = np.zeros(graph.num_edges)
        dresid = 2.0 * resid / (idx.size * SPEED_SCALE_MPH)
        dpred[idx] = dresid * (-60.0 * dist / preds**2)
        grads = backward(model, graph, trace, dpred)
        if total_grads is None:
            total_grads = grads
        else:
            for k in total_grads:
                total_grads[k] += grads[k]

    b = len(batch)
    return total_loss / b, ModelGradient(tree_scale(total_grads, 1.0 / b))


def local_train(
    model: GnnModel,
    graph: GraphTensors,
    samples: list[TrainingSample],
    epochs: int = 3,
    lr: float = 0.01,
    batch_size: int = 10,
    seed: int = 0,
    use_dropout: bool = True,
) -> tuple[ModelGradient, float]:
    """SGD on a copy of the model; returns (theta_after - theta_before, final loss).

    Sample order is reshuffled per epoch from the seed; dropout masks are
    seeded per (seed, epoch, batch) so the whole run is reproducible.

    Raises:
        EmptyDatasetError: the client has no samples.
    """
    if not samples:
        raise EmptyDatasetError("local training requires at least one sample")
    work = model.copy()
    before = {k: v.copy() for k, v in model.params.items()}

    final_epoch_losses: list[float] = []
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(samples))
        losses = []
        for bi, start in enumerate(range(0, len(samples), batch_size)):
            batch = [samples[i] for i in order[start : start + batch_size]]
            loss, grad = loss_and_gradient(
                work,
                graph,
                batch,
                training=use_dropout,
                dropout_seed=[seed, epoch, bi],
            )
            for k in work.params:
                work.params[k] = work.params[k] - lr * grad.tensors[k]
            losses.append(loss)
        final_epoch_losses = losses

    update = ModelGradient(tree_sub(work.params, before))
    return update, float(np.mean(final_epoch_losses))
