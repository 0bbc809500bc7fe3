"""Scenario driver: demand, congestion dynamics, and the closed loop.

Ground-truth edge times follow the BPR volume-delay curve; the predictor
is trained on noisy observations of those times. Each step generates
demand, predicts edge times with the current global model, assigns
routes, advances the flow state (decay plus injections), and banks
observations; every ``steps_per_round`` steps one federated round runs
on the data accumulated since the previous round.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhaustedError, IncompleteReportError
from .federated import ClientDataset, FederatedConfig, FederationState, RoundReport, run_round
from .gnn.forward import initial_hidden, predict_edge_times
from .gnn.model import GnnConfig, GnnModel, GraphTensors, graph_tensors, induced_subnetwork
from .gnn.train import TrainingSample
from .metrics import gini_traffic, jain_index, region_load
from .network import (
    RegionPartition,
    RoadNetwork,
    SegmentDemographics,
    TrafficState,
    free_flow_state,
)
from .privacy import PrivacyAccountant
from .routing import Assignment, ObjectiveWeights, VehicleRequest, assign_routes

BPR_ALPHA = 0.15
BPR_BETA = 4.0
FLOW_DECAY = 0.7
OBS_NOISE_STD = 0.05  # fraction of the true value


@dataclass(frozen=True)
class EdgeDynamics:
    """BPR volume-delay parameters."""

    alpha: float = BPR_ALPHA
    beta: float = BPR_BETA

    def __post_init__(self) -> None:
        if self.alpha < 0.0 or self.beta < 1.0:
            raise ValueError("need alpha >= 0 and beta >= 1")


def ground_truth_time(
    free_flow_time: float, capacity: float, flow: float, dynamics: EdgeDynamics = EdgeDynamics()
) -> float:
    """Travel time in minutes at the given hourly flow."""
    if flow < 0.0:
        raise ValueError("flow must be non-negative")
    return free_flow_time * (1.0 + dynamics.alpha * (flow / capacity) ** dynamics.beta)


def state_travel_times(
    net: RoadNetwork, flow: np.ndarray, dynamics: EdgeDynamics = EdgeDynamics()
) -> np.ndarray:
    ratio = flow / net.capacities()
    return net.free_flow_times() * (1.0 + dynamics.alpha * ratio**dynamics.beta)


@dataclass(frozen=True)
class DemandModel:
    """Poisson arrivals per step with node-weighted O/D sampling."""

    rate: float = 4.0
    node_weights: tuple[float, ...] | None = None  # None -> uniform

    def __post_init__(self) -> None:
        if self.rate < 0.0:
            raise ValueError("rate must be >= 0")
        if self.node_weights is not None:
            w = np.array(self.node_weights)
            if np.any(w < 0) or w.sum() <= 0:
                raise ValueError("node weights must be non-negative and sum > 0")


def generate_demand(
    model: DemandModel, net: RoadNetwork, step: int, seed: int | list[int]
) -> list[VehicleRequest]:
    """Seeded demand for one step; origin != destination by rejection."""
    rng = np.random.default_rng(seed)
    count = int(rng.poisson(model.rate))
    n = net.num_nodes
    if model.node_weights is None:
        probs = None
    else:
        w = np.array(model.node_weights, dtype=float)
        probs = w / w.sum()
    out = []
    for i in range(count):
        origin = int(rng.choice(n, p=probs))
        dest = origin
        for _ in range(100):
            dest = int(rng.choice(n, p=probs))
            if dest != origin:
                break
        if dest == origin:
            continue
        out.append(
            VehicleRequest(step * 100000 + i, net.nodes[origin], net.nodes[dest])
        )
    return out


def step_state(
    net: RoadNetwork,
    state: TrafficState,
    injections: np.ndarray,
    decay: float = FLOW_DECAY,
    dynamics: EdgeDynamics = EdgeDynamics(),
) -> TrafficState:
    """Next state: decayed flows plus injected route flows, BPR speeds."""
    flow = decay * state.flow + np.asarray(injections, dtype=float)
    times = state_travel_times(net, flow, dynamics)
    speed = 60.0 * net.distances() / times
    return TrafficState(state.time_step + 1, flow, speed)


@dataclass
class Scenario:
    """Everything a deterministic run needs besides the federated config."""

    net: RoadNetwork
    partition: RegionPartition
    demographics: SegmentDemographics
    demand: DemandModel = field(default_factory=DemandModel)
    horizon: int = 30
    step_minutes: float = 5.0
    steps_per_round: int = 5
    seed: int = 0
    gnn: GnnConfig = field(default_factory=GnnConfig)
    dynamics: EdgeDynamics = field(default_factory=EdgeDynamics)
    candidates_k: int = 3
    diverse_count: int = 2
    reset_hidden_each_round: bool = True

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.step_minutes <= 0.0:
            raise ValueError("step length must be positive")

    @property
    def flow_increment(self) -> float:
        """Hourly flow contributed by one vehicle over a step."""
        return 60.0 / self.step_minutes


@dataclass
class StepRecord:
    step: int
    vehicles: int
    unreachable: int
    gini: float
    jain: float
    mean_travel_time_min: float
    mean_predicted_time_min: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "vehicles": self.vehicles,
            "unreachable": self.unreachable,
            "gini": self.gini,
            "jain": self.jain,
            "mean_travel_time_min": self.mean_travel_time_min,
            "mean_predicted_time_min": self.mean_predicted_time_min,
        }


@dataclass
class ScenarioReport:
    steps: list[StepRecord]
    rounds: list[RoundReport]
    summary: dict
    budget_frozen: bool

    def to_json(self) -> str:
        payload = {
            "steps": [s.to_dict() for s in self.steps],
            "rounds": [r.to_dict() for r in self.rounds],
            "summary": self.summary,
            "budget_frozen": self.budget_frozen,
        }
        return json.dumps(payload, sort_keys=True)

    def round_json_lines(self) -> str:
        """One JSON record per round for the streaming report format."""
        lines = []
        for r, extra in zip(self.rounds, self.summary.get("round_metrics", [])):
            rec = {
                "round": r.round_index,
                "mean_loss": r.mean_loss,
                "travel_time_min": extra["travel_time_min"],
                "gini": extra["gini"],
                "jain": extra["jain"],
                "epsilon_spent": r.epsilon_spent,
                "uplink_bytes": r.uplink_bytes,
                "downlink_bytes": r.downlink_bytes,
            }
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def _mean_assigned_time(
    assignments: list[Assignment], times: np.ndarray
) -> float:
    vals = [
        float(sum(times[i] for i in a.route.edge_indices))
        for a in assignments
        if a.reachable
    ]
    return float(np.mean(vals)) if vals else 0.0


def _safe_gini(loads: np.ndarray) -> float:
    if float(np.sum(loads)) == 0.0 or len(loads) < 2:
        return 0.0
    return gini_traffic(loads)


def _safe_jain(loads: np.ndarray) -> float:
    if float(np.sum(loads**2)) == 0.0:
        return 1.0
    return jain_index(loads)


def _round_seed(seed: int, round_index: int) -> int:
    return int(np.random.SeedSequence((seed, 7919, round_index)).generate_state(1)[0])


def run_scenario(
    scenario: Scenario,
    fed_config: FederatedConfig,
    weights: ObjectiveWeights,
) -> ScenarioReport:
    """Alternate route assignment steps with federated training rounds.

    Fully determined by (scenario, seed): demand, observation noise,
    dropout and privacy noise all derive from the scenario seed. A
    rejected privacy charge freezes training but the simulation keeps
    running with the frozen model.
    """
    net = scenario.net
    gfull = graph_tensors(net)
    model = GnnModel.create(scenario.gnn, seed=scenario.seed)
    fed = FederationState(
        model=model,
        accountant=PrivacyAccountant(fed_config.epsilon_budget, fed_config.privacy.delta),
        clip_norm=fed_config.privacy.clip_norm,
    )

    subgraphs: dict[int, tuple[GraphTensors, np.ndarray, np.ndarray]] = {}
    for rid in scenario.partition.region_ids:
        sub, edge_map = induced_subnetwork(net, scenario.partition.members[rid])
        node_map = np.array([net.node_index[n] for n in sub.nodes], dtype=int)
        subgraphs[rid] = (graph_tensors(sub), node_map, edge_map)

    state = free_flow_state(net)
    h_global = initial_hidden(gfull, scenario.gnn.hidden_dim)
    buffers: dict[int, list[TrainingSample]] = {rid: [] for rid in scenario.partition.region_ids}

    steps: list[StepRecord] = []
    rounds: list[RoundReport] = []
    round_metrics: list[dict] = []
    budget_frozen = False
    round_index = 0

    for t in range(scenario.horizon):
        obs = state.node_features(net)
        preds, h_new = predict_edge_times(fed.model, gfull, obs, h_global)

        requests = generate_demand(scenario.demand, net, t, [scenario.seed, t, 11])
        assignments, new_flow = assign_routes(
            requests,
            state,
            preds,
            weights,
            scenario.partition,
            net,
            scenario.demographics,
            k=scenario.candidates_k,
            diverse_count=scenario.diverse_count,
            flow_increment=scenario.flow_increment,
        )
        injections = new_flow - state.flow
        next_state = step_state(net, state, injections, dynamics=scenario.dynamics)

        true_times = state_travel_times(net, next_state.flow, scenario.dynamics)
        noise_rng = np.random.default_rng([scenario.seed, t, 13])
        noisy_speed = (60.0 * net.distances() / true_times) * (
            1.0 + OBS_NOISE_STD * noise_rng.standard_normal(net.num_edges)
        )
        noisy_speed = np.maximum(noisy_speed, 1.0)

        for rid, (gsub, node_map, edge_map) in subgraphs.items():
            if gsub.num_edges == 0:
                continue
            sub_state = TrafficState(
                next_state.time_step, next_state.flow[edge_map], next_state.speed[edge_map]
            )
            sub_net_obs = obs[node_map]
            buffers[rid].append(
                TrainingSample(
                    obs=sub_net_obs,
                    h_prev=h_global[node_map],
                    target_edges=np.arange(gsub.num_edges),
                    target_speeds=noisy_speed[edge_map],
                )
            )
            del sub_state  # observation targets already extracted

        h_global = h_new
        loads = region_load(next_state, scenario.partition, net)
        mean_tt = _mean_assigned_time(assignments, true_times)
        mean_pred = _mean_assigned_time(assignments, preds)
        steps.append(
            StepRecord(
                step=t,
                vehicles=len(requests),
                unreachable=sum(1 for a in assignments if not a.reachable),
                gini=_safe_gini(loads),
                jain=_safe_jain(loads),
                mean_travel_time_min=mean_tt,
                mean_predicted_time_min=mean_pred,
            )
        )
        state = next_state

        boundary = (t + 1) % scenario.steps_per_round == 0
        if boundary and round_index < fed_config.rounds and not budget_frozen:
            clients = [
                ClientDataset(rid, subgraphs[rid][0], list(buffers[rid]))
                for rid in scenario.partition.region_ids
                if buffers[rid]
            ]
            if clients:
                try:
                    report = run_round(
                        fed, clients, fed_config, round_index, _round_seed(scenario.seed, round_index)
                    )
                    rounds.append(report)
                    round_metrics.append(
                        {
                            "travel_time_min": mean_tt,
                            "gini": steps[-1].gini,
                            "jain": steps[-1].jain,
                        }
                    )
                    round_index += 1
                    for rid in buffers:
                        buffers[rid].clear()
                    if scenario.reset_hidden_each_round:
                        h_global = initial_hidden(gfull, scenario.gnn.hidden_dim)
                except BudgetExhaustedError:
                    budget_frozen = True

    traffic_steps = [s for s in steps if s.vehicles > 0]
    summary = {
        "horizon": scenario.horizon,
        "rounds_completed": len(rounds),
        "travel_time_min": (
            float(np.mean([s.mean_travel_time_min for s in traffic_steps]))
            if traffic_steps
            else 0.0
        ),
        "gini": steps[-1].gini if steps else 0.0,
        "jain": steps[-1].jain if steps else 1.0,
        "fairness_score": 1.0 - (steps[-1].gini if steps else 0.0),
        "final_loss": rounds[-1].mean_loss if rounds else None,
        "epsilon_spent": fed.accountant.spent,
        "uplink_bytes": fed.ledger.total_uplink,
        "downlink_bytes": fed.ledger.total_downlink,
        "bytes_mb": (fed.ledger.total_uplink + fed.ledger.total_downlink) / 1e6,
        "round_metrics": round_metrics,
    }
    return ScenarioReport(steps, rounds, summary, budget_frozen)


def synthetic_observation_round_data(
    net: RoadNetwork,
    partition: RegionPartition,
    gnn: GnnConfig,
    samples_per_client: int,
    seed: int,
    dynamics: EdgeDynamics = EdgeDynamics(),
) -> list[ClientDataset]:
    """Training-only datasets: random flow snapshots with BPR targets.

    Used by the ``train`` subcommand (federated rounds without routing).
    Flows are sampled uniformly in [0, 1.2 * capacity] and targets are
    noisy ground-truth speeds of the same snapshot.
    """
    clients = []
    for rid in partition.region_ids:
        sub, _ = induced_subnetwork(net, partition.members[rid])
        gsub = graph_tensors(sub)
        if gsub.num_edges == 0:
            continue
        rng = np.random.default_rng([seed, 17, rid])
        samples = []
        for _ in range(samples_per_client):
            flow = rng.uniform(0.0, 1.2, gsub.num_edges) * sub.capacities()
            times = state_travel_times(sub, flow, dynamics)
            speed = 60.0 * sub.distances() / times
            st = TrafficState(0, flow, speed)
            noisy = np.maximum(
                speed * (1.0 + OBS_NOISE_STD * rng.standard_normal(gsub.num_edges)), 1.0
            )
            samples.append(
                TrainingSample(
                    obs=st.node_features(sub),
                    h_prev=np.zeros((gsub.num_nodes, gnn.hidden_dim)),
                    target_edges=np.arange(gsub.num_edges),
                    target_speeds=noisy,
                )
            )
        clients.append(ClientDataset(rid, gsub, samples))
    return clients


def train_rounds(
    net: RoadNetwork,
    partition: RegionPartition,
    fed_config: FederatedConfig,
    gnn: GnnConfig,
    samples_per_client: int = 12,
    seed: int = 0,
) -> tuple[list[RoundReport], GnnModel]:
    """Federated training on static synthetic observation data, no routing."""
    clients = synthetic_observation_round_data(net, partition, gnn, samples_per_client, seed)
    fed = FederationState(
        model=GnnModel.create(gnn, seed=seed),
        accountant=PrivacyAccountant(fed_config.epsilon_budget, fed_config.privacy.delta),
        clip_norm=fed_config.privacy.clip_norm,
    )
    reports = []
    for r in range(fed_config.rounds):
        try:
            reports.append(run_round(fed, clients, fed_config, r, _round_seed(seed, r)))
        except BudgetExhaustedError:
            break
    return reports, fed.model


def evaluate(summary: dict, baselines: list[dict]) -> dict:
    """Comparison table against externally supplied baseline rows.

    Baseline numbers are inputs, never recomputed. Deltas are percentage
    changes of this run relative to each baseline; byte figures compare
    as reductions.

    Raises:
        IncompleteReportError: the summary lacks a required field.
    """
    required = ["travel_time_min", "gini", "bytes_mb"]
    for key in required:
        if key not in summary or summary[key] is None:
            raise IncompleteReportError(f"summary is missing {key!r}")
    rows = []
    for base in baselines:
        row: dict = {"name": base.get("name", "baseline")}
        if base.get("travel_time_min"):
            row["travel_time_delta_pct"] = (
                (summary["travel_time_min"] - base["travel_time_min"])
                / base["travel_time_min"]
                * 100.0
            )
        if base.get("gini") is not None and base.get("gini") != 0:
            row["gini_delta_pct"] = (summary["gini"] - base["gini"]) / base["gini"] * 100.0
        if base.get("bytes_mb"):
            row["bytes_reduction_pct"] = (1.0 - summary["bytes_mb"] / base["bytes_mb"]) * 100.0
        rows.append(row)
    return {
        "run": {
            "travel_time_min": summary["travel_time_min"],
            "gini": summary["gini"],
            "fairness_score": 1.0 - summary["gini"],
            "bytes_mb": summary["bytes_mb"],
            "epsilon_spent": summary.get("epsilon_spent"),
        },
        "baselines": rows,
    }
