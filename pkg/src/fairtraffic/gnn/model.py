"""Model parameters for the message-passing traffic predictor.

Parameters live in a flat name -> ndarray tree. Gradients share the same
tree shape, which the privacy and quantization stages rely on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import WidthMismatchError
from ..network import RoadNetwork


@dataclass(frozen=True)
class GnnConfig:
    """Architecture hyperparameters.

    ``hidden_dim`` and the three-layer depth follow the reference
    experiment setup; tests shrink ``hidden_dim`` for speed.
    """

    obs_dim: int = 4
    static_dim: int = 2
    edge_dim: int = 3
    hidden_dim: int = 64
    num_layers: int = 3
    dropout: float = 0.2
    leaky_slope: float = 0.2
    layernorm_eps: float = 1e-5
    aggregator: str = "attention"  # or "mean" (ablation)

    @property
    def input_dim(self) -> int:
        return self.obs_dim + self.static_dim

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.hidden_dim


def parameter_shapes(cfg: GnnConfig) -> dict[str, tuple[int, ...]]:
    """Shape manifest, keyed by parameter name (deterministic order)."""
    d = cfg.hidden_dim
    shapes: dict[str, tuple[int, ...]] = {}
    for layer in range(cfg.num_layers):
        w = cfg.layer_input_dim(layer)
        shapes[f"layer{layer}.w_msg"] = (d, 2 * w + cfg.edge_dim)
        shapes[f"layer{layer}.w_self"] = (d, w)
        shapes[f"layer{layer}.w_neigh"] = (d, d)
        shapes[f"layer{layer}.attn"] = (2 * w,)
    for gate in ("z", "r", "h"):
        shapes[f"gru.w_{gate}"] = (d, d)
        shapes[f"gru.u_{gate}"] = (d, d)
        shapes[f"gru.b_{gate}"] = (d,)
    shapes["readout.weight"] = (2 * d,)
    shapes["readout.bias"] = (1,)
    return shapes


def init_params(cfg: GnnConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init; biases zero."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".bias") or ".b_" in name:
            params[name] = np.zeros(shape)
        else:
            fan_in = shape[-1]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


# --- tree helpers ------------------------------------------------------


def tree_zeros_like(tree: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in tree.items()}


def tree_copy(tree: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in tree.items()}


def tree_add(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: a[k] + b[k] for k in a}

def tree_sub(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: a[k] - b[k] for k in a}


def tree_scale(tree: dict[str, np.ndarray], c: float) -> dict[str, np.ndarray]:
    return {k: v * c for k, v in tree.items()}


def tree_norm(tree: dict[str, np.ndarray]) -> float:
    """2-norm of the flattened tree."""
    total = 0.0
    for k in sorted(tree):
        total += float(np.sum(tree[k] ** 2))
    return float(np.sqrt(total))


def tree_flatten(tree: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([tree[k].ravel() for k in sorted(tree)])


def tree_unflatten(flat: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for k in sorted(like):
        n = like[k].size
        out[k] = flat[pos : pos + n].reshape(like[k].shape)
        pos += n
    if pos != flat.size:
        raise WidthMismatchError("flat vector does not match tree size")
    return out


def tree_param_count(tree: dict[str, np.ndarray]) -> int:
    return sum(v.size for v in tree.values())


def tree_same_shape(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    return set(a) == set(b) and all(a[k].shape == b[k].shape for k in a)


@dataclass
class ModelGradient:
    """Gradient (or update) with the same shape tree as the model."""

    tensors: dict[str, np.ndarray]

    @property
    def l2_norm(self) -> float:
        return tree_norm(self.tensors)

    def scaled(self, c: float) -> "ModelGradient":
        return ModelGradient(tree_scale(self.tensors, c))

    def copy(self) -> "ModelGradient":
        return ModelGradient(tree_copy(self.tensors))


@dataclass
class GnnModel:
    """Config plus parameter tree; owned by a single client while training."""

    cfg: GnnConfig
    params: dict[str, np.ndarray]

    @staticmethod
    def create(cfg: GnnConfig, seed: int) -> "GnnModel":
        return GnnModel(cfg, init_params(cfg, seed))

    def copy(self) -> "GnnModel":
        return GnnModel(self.cfg, tree_copy(self.params))

    @property
    def param_count(self) -> int:
        return tree_param_count(self.params)

    def apply_update(self, update: ModelGradient) -> None:
        if not tree_same_shape(self.params, update.tensors):
            raise WidthMismatchError("update shape tree differs from model")
        for k in self.params:
            self.params[k] = self.params[k] + update.tensors[k]

    def to_json(self) -> str:
        """Checkpoint: config plus tensors with a shape manifest, sorted keys."""
        payload = {
            "config": {
                "obs_dim": self.cfg.obs_dim,
                "static_dim": self.cfg.static_dim,
                "edge_dim": self.cfg.edge_dim,
                "hidden_dim": self.cfg.hidden_dim,
                "num_layers": self.cfg.num_layers,
                "dropout": self.cfg.dropout,
                "leaky_slope": self.cfg.leaky_slope,
                "layernorm_eps": self.cfg.layernorm_eps,
                "aggregator": self.cfg.aggregator,
            },
            "tensors": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in sorted(self.params.items())
            },
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "GnnModel":
        payload = json.loads(text)
        cfg = GnnConfig(**payload["config"])
        params = {}
        for k, rec in payload["tensors"].items():
            params[k] = np.array(rec["data"], dtype=float).reshape(rec["shape"])
        expected = parameter_shapes(cfg)
        got = {k: v.shape for k, v in params.items()}
        if got != expected:
            raise WidthMismatchError("checkpoint tensors do not match config shapes")
        return GnnModel(cfg, params)


@dataclass(frozen=True)
class GraphTensors:
    """Graph structure in array form, precomputed once per (sub)network."""

    num_nodes: int
    ends: np.ndarray  # (E, 2) int, columns (from, to)
    node_static: np.ndarray  # (N, static_dim)
    edge_attr: np.ndarray  # (E, edge_dim)
    free_flow: np.ndarray  # (E,) minutes
    distance: np.ndarray  # (E,) miles

    @property
    def num_edges(self) -> int:
        return len(self.ends)


def graph_tensors(net: RoadNetwork) -> GraphTensors:
    return GraphTensors(
        num_nodes=net.num_nodes,
        ends=net.edge_endpoints(),
        node_static=net.node_static_features(),
        edge_attr=net.edge_static_features(),
        free_flow=net.free_flow_times(),
        distance=net.distances(),
    )


def induced_subnetwork(net: RoadNetwork, nodes: list[str]) -> tuple[RoadNetwork, np.ndarray]:
    """Subgraph on ``nodes`` plus the indices of its edges in the parent.

    Keeps edges whose endpoints both lie in ``nodes``; node and edge order
    follow the parent network for determinism.
    """
    from ..network import build_network

    keep = set(nodes)
    ordered = [n for n in net.nodes if n in keep]
    edge_specs = []
    parent_idx = []
    for i, e in enumerate(net.edges):
        if e.from_node in keep and e.to_node in keep:
            edge_specs.append(
                (e.edge_id, e.from_node, e.to_node, e.free_flow_time, e.capacity, e.distance)
            )
            parent_idx.append(i)
    sub = build_network(ordered, edge_specs)
    return sub, np.array(parent_idx, dtype=int)
