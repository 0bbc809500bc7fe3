"""Federated round orchestration and communication accounting.

One round: score-and-select clients, broadcast the global model, run
local SGD per client, clip/noise/quantize each update, dequantize and
average on the server, then apply the mean update. Cross-client merges
happen in ascending client-id order so the outcome does not depend on
scheduling. Aggregation weights are uniform (1/N), not data-size
weighted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CorruptPayloadError, InvalidBitsError, InvalidKError
from .gnn.model import (
    GnnModel,
    GraphTensors,
    ModelGradient,
    tree_add,
    tree_scale,
    tree_zeros_like,
)
from .gnn.train import TrainingSample, local_train
from .privacy import (
    AdaptiveClipConfig,
    PrivacyAccountant,
    PrivacyParams,
    adapt_clip_norm,
    add_noise,
    clip_gradient,
)

TENSOR_HEADER_BYTES = 64
FLOAT_BYTES = 4  # broadcast precision


# --- gradient quantization ----------------------------------------------


@dataclass
class QuantizedTensor:
    bits: int
    shape: tuple[int, ...]
    vmin: float
    vmax: float
    indices: np.ndarray | None  # uint32 level indices, None when bits == 32
    raw: np.ndarray | None  # float copy for the bits == 32 bypass

    def payload_bytes(self) -> int:
        n = int(np.prod(self.shape)) if self.shape else 1
        return math.ceil(n * self.bits / 8) + TENSOR_HEADER_BYTES


@dataclass
class QuantizedGradient:
    tensors: dict[str, QuantizedTensor]

    def payload_bytes(self) -> int:
        return sum(t.payload_bytes() for t in self.tensors.values())


def quantize(
    grad: ModelGradient,
    bits: int,
    seed: int | list[int] | None = None,
    mode: str = "stochastic",
) -> QuantizedGradient:
    """Uniform per-tensor quantization into 2^bits levels over [min, max].

    Stochastic mode rounds up with probability equal to the fractional
    level, which makes reconstruction unbiased; deterministic mode rounds
    to the nearest level. bits = 32 bypasses quantization entirely.

    Raises:
        InvalidBitsError: bits outside [1, 32].
    """
    if not 1 <= bits <= 32:
        raise InvalidBitsError(f"bits must be in [1, 32], got {bits}")
    if mode not in ("stochastic", "deterministic"):
        raise ValueError(f"unknown quantization mode {mode!r}")
    rng = np.random.default_rng(seed) if mode == "stochastic" else None
    out: dict[str, QuantizedTensor] = {}
    for name in sorted(grad.tensors):
        v = grad.tensors[name]
        if bits == 32:
            out[name] = QuantizedTensor(32, v.shape, 0.0, 0.0, None, v.copy())
            continue
        vmin = float(v.min())
        vmax = float(v.max())
        levels = (1 << bits) - 1
        if vmax == vmin:
            idx = np.zeros(v.shape, dtype=np.uint32)
        else:
            y = (v - vmin) / (vmax - vmin) * levels
            if mode == "stochastic":
                lower = np.floor(y)
                frac = y - lower
                idx = lower + (rng.random(v.shape) < frac)
            else:
                idx = np.floor(y + 0.5)
            idx = np.clip(idx, 0, levels).astype(np.uint32)
        out[name] = QuantizedTensor(bits, v.shape, vmin, vmax, idx, None)
    return QuantizedGradient(out)


def dequantize(q: QuantizedGradient) -> ModelGradient:
    """Map level indices back to values: min + index * step.

    Raises:
        CorruptPayloadError: malformed payload (bad bits, indices out of
            range, or inconsistent bounds).
    """
    out: dict[str, np.ndarray] = {}
    for name, t in q.tensors.items():
        if not 1 <= t.bits <= 32:
            raise CorruptPayloadError(f"{name}: bad bit width {t.bits}")
        if t.bits == 32:
            if t.raw is None or t.raw.shape != t.shape:
                raise CorruptPayloadError(f"{name}: missing raw payload")
            out[name] = t.raw.copy()
            continue
        levels = (1 << t.bits) - 1
        if t.indices is None or t.indices.shape != t.shape:
            raise CorruptPayloadError(f"{name}: missing level indices")
        if t.vmax < t.vmin:
            raise CorruptPayloadError(f"{name}: max < min")
        if t.indices.max(initial=0) > levels:
            raise CorruptPayloadError(f"{name}: index exceeds {levels}")
        if t.vmax == t.vmin:
            out[name] = np.full(t.shape, t.vmin)
        else:
            step = (t.vmax - t.vmin) / levels
            out[name] = t.vmin + t.indices.astype(float) * step
    return ModelGradient(out)


# --- client selection ----------------------------------------------------


@dataclass(frozen=True)
class ClientScore:
    client_id: int
    contribution: float
    diversity: float

    @property
    def product(self) -> float:
        return self.contribution * self.diversity


@dataclass
class ClientInfo:
    """What the selector may see about a client (no raw data)."""

    client_id: int
    summary: np.ndarray  # label-mean summary of the local distribution
    last_update_norm: float | None = None


@dataclass
class SelectionHistory:
    last_selected: list[int] = field(default_factory=list)
    last_update_norms: dict[int, float] = field(default_factory=dict)


def select_by_scores(scores: list[ClientScore], k: int) -> list[int]:
    """Greedy argmax of sum(contribution * diversity) over k clients.

    With fixed per-client scores the objective is modular, so picking the
    k largest products (ties to the lowest id) is exact.

    Raises:
        InvalidKError: k outside [1, N].
    """
    if not 1 <= k <= len(scores):
        raise InvalidKError(f"k must be in [1, {len(scores)}], got {k}")
    ranked = sorted(scores, key=lambda s: (-s.product, s.client_id))
    return sorted(s.client_id for s in ranked[:k])


def score_and_select(
    clients: list[ClientInfo], k: int, history: SelectionHistory
) -> tuple[list[int], list[ClientScore]]:
    """Score clients from history and pick k of them.

    Contribution is the norm of the client's last transmitted update
    (1.0 before any participation); diversity is the distance of the
    client's summary from the mean summary of the previously selected
    set (1.0 on the first round).
    """
    prev = [c for c in clients if c.client_id in set(history.last_selected)]
    center = np.mean([c.summary for c in prev], axis=0) if prev else None
    scores = []
    for c in sorted(clients, key=lambda c: c.client_id):
        contribution = (
            history.last_update_norms.get(c.client_id)
            if c.client_id in history.last_update_norms
            else c.last_update_norm
        )
        if contribution is None:
            contribution = 1.0
        diversity = 1.0 if center is None else float(np.linalg.norm(c.summary - center))
        scores.append(ClientScore(c.client_id, float(contribution), diversity))
    return select_by_scores(scores, k), scores


# --- communication accounting ---------------------------------------------


def ledger_bytes(
    model_size: int, bits: int, clients_selected: int, num_tensors: int = 1
) -> tuple[int, int]:
    """(uplink, downlink) bytes for one round under the accounting model.

    Uplink per client: quantized payload plus a 64-byte header per
    tensor. Downlink per client: full-precision broadcast of the model.
    """
    if model_size <= 0:
        raise ValueError("model size must be positive")
    uplink = clients_selected * (math.ceil(model_size * bits / 8) + TENSOR_HEADER_BYTES * num_tensors)
    downlink = clients_selected * model_size * FLOAT_BYTES
    return uplink, downlink


def uplink_reduction(
    bits_a: int, participation_a: float, bits_b: int, participation_b: float
) -> float:
    """Closed-form payload reduction of scheme A relative to scheme B."""
    return 1.0 - (participation_a * bits_a) / (participation_b * bits_b)


@dataclass
class LedgerEntry:
    round_index: int
    uplink_bytes: int
    downlink_bytes: int
    clients: list[int]


@dataclass
class CommunicationLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def record(self, entry: LedgerEntry) -> None:
        self.entries.append(entry)

    @property
    def total_uplink(self) -> int:
        return sum(e.uplink_bytes for e in self.entries)

    @property
    def total_downlink(self) -> int:
        return sum(e.downlink_bytes for e in self.entries)


# --- round orchestration ---------------------------------------------------


@dataclass
class FederatedConfig:
    num_clients: int = 6
    rounds: int = 10
    local_epochs: int = 3
    participation: int | None = None  # selected per round; None -> all
    bits: int = 32
    quantization_mode: str = "stochastic"
    adaptive_bits: bool = False
    privacy: PrivacyParams = field(default_factory=PrivacyParams)
    epsilon_budget: float = 10.0
    adaptive_clip: AdaptiveClipConfig | None = None
    lr: float = 0.01
    batch_size: int = 10
    use_dropout: bool = True

    def selected_count(self) -> int:
        k = self.participation if self.participation is not None else self.num_clients
        if not 1 <= k <= self.num_clients:
            raise InvalidKError(f"participation must be in [1, {self.num_clients}]")
        return k


@dataclass
class ClientDataset:
    client_id: int
    graph: GraphTensors
    samples: list[TrainingSample]

    def summary(self) -> np.ndarray:
        """Label-mean summary: mean observed speed (scalar vector)."""
        if not self.samples:
            return np.zeros(1)
        return np.array(
            [float(np.mean([np.mean(s.target_speeds) for s in self.samples]))]
        )


@dataclass
class FederationState:
    model: GnnModel
    accountant: PrivacyAccountant
    clip_norm: float
    ledger: CommunicationLedger = field(default_factory=CommunicationLedger)
    history: SelectionHistory = field(default_factory=SelectionHistory)


@dataclass
class RoundReport:
    round_index: int
    selected: list[int]
    mean_loss: float
    epsilon_spent: float
    clip_norm: float
    sigma: float
    bits: int
    uplink_bytes: int
    downlink_bytes: int

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "selected": list(self.selected),
            "mean_loss": self.mean_loss,
            "epsilon_spent": self.epsilon_spent,
            "clip_norm": self.clip_norm,
            "sigma": self.sigma,
            "bits": self.bits,
            "uplink_bytes": self.uplink_bytes,
            "downlink_bytes": self.downlink_bytes,
        }


def adaptive_bits_rule(norms: list[float]) -> int:
    """Bounded bit allocation from the spread of client update norms.

    Uses the squared coefficient of variation capped at 1 as the
    variance ratio, mapped into [4, 16] bits.
    """
    mean = float(np.mean(norms))
    if mean <= 0.0:
        return 4
    ratio = min(1.0, float(np.var(norms)) / mean**2)
    return int(np.clip(round(32 * ratio), 4, 16))


def _client_seed(seed: int, round_index: int, client_id: int) -> int:
    return int(np.random.SeedSequence((seed, round_index, client_id)).generate_state(1)[0])


def run_round(
    fed: FederationState,
    clients: list[ClientDataset],
    config: FederatedConfig,
    round_index: int,
    seed: int,
) -> RoundReport:
    """Execute one federated round, mutating the federation state.

    The privacy charge happens first, so a rejected charge aborts the
    round before any model mutation (BudgetExhaustedError propagates).
    """
    params = PrivacyParams(
        epsilon=config.privacy.epsilon,
        delta=config.privacy.delta,
        clip_norm=fed.clip_norm,
        noise_multiplier=config.privacy.noise_multiplier,
    )
    fed.accountant.charge(params.epsilon)

    infos = [
        ClientInfo(c.client_id, c.summary(), fed.history.last_update_norms.get(c.client_id))
        for c in clients
    ]
    selected_ids, _ = score_and_select(infos, config.selected_count(), fed.history)
    by_id = {c.client_id: c for c in clients}
    model_size = fed.model.param_count
    num_tensors = len(fed.model.params)
    downlink = len(selected_ids) * model_size * FLOAT_BYTES

    raw_updates: dict[int, ModelGradient] = {}
    losses: list[float] = []
    for cid in sorted(selected_ids):
        client = by_id[cid]
        update, loss = local_train(
            fed.model,
            client.graph,
            client.samples,
            epochs=config.local_epochs,
            lr=config.lr,
            batch_size=config.batch_size,
            seed=_client_seed(seed, round_index, cid),
            use_dropout=config.use_dropout,
        )
        raw_updates[cid] = update
        losses.append(loss)

    norms = [raw_updates[cid].l2_norm for cid in sorted(selected_ids)]
    bits = adaptive_bits_rule(norms) if config.adaptive_bits else config.bits

    uplink = 0
    total = None
    for cid in sorted(selected_ids):
        clipped = clip_gradient(raw_updates[cid], params.clip_norm)
        noised = add_noise(
            clipped, params.sigma, params.clip_norm, [seed, round_index, cid, 1]
        )
        q = quantize(noised, bits, [seed, round_index, cid, 2], config.quantization_mode)
        uplink += q.payload_bytes()
        wire = dequantize(q)
        total = wire.tensors if total is None else tree_add(total, wire.tensors)

    mean_update = ModelGradient(tree_scale(total, 1.0 / len(selected_ids)))
    fed.model.apply_update(mean_update)

    if config.adaptive_clip is not None:
        fed.clip_norm = adapt_clip_norm(fed.clip_norm, norms, config.adaptive_clip)
    fed.history = SelectionHistory(
        last_selected=sorted(selected_ids),
        last_update_norms={cid: raw_updates[cid].l2_norm for cid in selected_ids},
    )
    fed.ledger.record(LedgerEntry(round_index, uplink, downlink, sorted(selected_ids)))

    return RoundReport(
        round_index=round_index,
        selected=sorted(selected_ids),
        mean_loss=float(np.mean(losses)),
        epsilon_spent=fed.accountant.spent,
        clip_norm=params.clip_norm,
        sigma=params.sigma,
        bits=bits,
        uplink_bytes=uplink,
        downlink_bytes=downlink,
    )
