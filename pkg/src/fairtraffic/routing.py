"""Fairness-aware multi-objective route selection.

Candidate routes come from a loopless k-shortest-path search plus
penalty-based diverse alternatives. Each candidate is scored on four
objectives (travel time, regional-inequality delta, demographic impact,
emissions proxy); the winner is the Pareto-front member closest to the
ideal point in min-max-normalized objective space. Assignment is
sequential: every chosen route injects flow before the next request is
evaluated.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    LambdaOutOfRangeError,
    MissingDemographicsError,
    MissingPredictionError,
    MissingStateError,
    NegativeWeightError,
    NoCandidatesError,
    ZeroMeanLoadError,
)
from .metrics import gini_traffic, region_load
from .network import RegionPartition, RoadNetwork, SegmentDemographics, TrafficState

EMISSION_BASE_G_PER_MILE = 200.0
DIVERSITY_PENALTY = 1.3


@dataclass(frozen=True)
class VehicleRequest:
    vehicle_id: int
    origin: str
    destination: str
    preferences: tuple[float, ...] | None = None  # reserved; not consumed by default

    def validate(self, net: RoadNetwork) -> None:
        if self.origin == self.destination:
            raise ValueError(f"vehicle {self.vehicle_id}: origin equals destination")
        if self.origin not in net.node_index or self.destination not in net.node_index:
            raise ValueError(f"vehicle {self.vehicle_id}: endpoint not in network")


@dataclass(frozen=True)
class Route:
    """Simple path stored as node sequence plus edge indices."""

    nodes: tuple[str, ...]
    edge_indices: tuple[int, ...]
    route_id: str

    def __len__(self) -> int:
        return len(self.edge_indices)


def route_from_nodes(net: RoadNetwork, nodes: list[str]) -> Route:
    """Build a Route from a node sequence, picking the cheapest parallel edge."""
    idxs = []
    for u, v in zip(nodes, nodes[1:]):
        ui = net.node_index[u]
        best = None
        for ei in net.out_edges[ui]:
            e = net.edges[ei]
            if e.to_node == v and (best is None or net.edges[best].free_flow_time > e.free_flow_time):
                best = ei
        if best is None:
            raise ValueError(f"no edge {u}->{v}")
        idxs.append(best)
    if len(set(idxs)) != len(idxs):
        raise ValueError("route repeats an edge")
    digest = hashlib.sha1(";".join(net.edges[i].edge_id for i in idxs).encode()).hexdigest()
    return Route(tuple(nodes), tuple(idxs), digest[:16])


@dataclass(frozen=True)
class RouteObjectives:
    travel_time: float  # minutes
    spatial_impact: float  # Gini delta
    demographic_impact: float
    emissions: float  # grams CO2-equivalent proxy

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.travel_time, self.spatial_impact, self.demographic_impact, self.emissions]
        )


@dataclass(frozen=True)
class ObjectiveWeights:
    """Route-selection weights: beta over the four objectives, plus the
    scalarization weight and fairness-combination alphas."""

    beta: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    lam: float = 0.5
    alpha_spatial: float = 1.0
    alpha_temporal: float = 0.0
    alpha_demographic: float = 0.0

    def __post_init__(self) -> None:
        if any(b < 0 for b in self.beta):
            raise NegativeWeightError("beta weights must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise LambdaOutOfRangeError(f"lambda must be in [0,1], got {self.lam}")


# --- candidate generation ---------------------------------------------


def _adjacency(net: RoadNetwork, weights: np.ndarray) -> list[list[tuple[str, float, int]]]:
    """Per-node (neighbor, weight, edge index), cheapest edge per neighbor."""
    adj: list[dict[str, tuple[float, int]]] = [dict() for _ in net.nodes]
    for ei, e in enumerate(net.edges):
        w = float(weights[ei])
        ui = net.node_index[e.from_node]
        cur = adj[ui].get(e.to_node)
        if cur is None or (w, ei) < cur:
            adj[ui][e.to_node] = (w, ei)
    return [sorted((v, w, ei) for v, (w, ei) in d.items()) for d in adj]


def _dijkstra(
    net: RoadNetwork,
    adj: list[list[tuple[str, float, int]]],
    origin: str,
    destination: str,
    banned_nodes: frozenset[str] = frozenset(),
    banned_arcs: frozenset[tuple[str, str]] = frozenset(),
) -> tuple[float, tuple[str, ...]] | None:
    """Cheapest path with deterministic (cost, node sequence) tie-breaking."""
    if origin in banned_nodes or destination in banned_nodes:
        return None
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (origin,))]
    done: set[str] = set()
    while heap:
        cost, path = heapq.heappop(heap)
        node = path[-1]
        if node == destination:
            return cost, path
        if node in done:
            continue
        done.add(node)
        for nxt, w, _ in adj[net.node_index[node]]:
            if nxt in done or nxt in banned_nodes or (node, nxt) in banned_arcs:
                continue
            heapq.heappush(heap, (cost + w, path + (nxt,)))
    return None


def _path_cost(net: RoadNetwork, adj, path: tuple[str, ...]) -> float:
    total = 0.0
    for u, v in zip(path, path[1:]):
        for nxt, w, _ in adj[net.node_index[u]]:
            if nxt == v:
                total += w
                break
    return total


def k_shortest_paths(
    net: RoadNetwork,
    origin: str,
    destination: str,
    k: int,
    weights: np.ndarray,
) -> list[Route]:
    """Up to k loopless paths in non-decreasing (cost, node sequence) order.

    Yen-style deviation search over the cheapest-edge adjacency. Returns
    an empty list when the destination is unreachable.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if np.any(np.asarray(weights) <= 0.0):
        raise ValueError("edge weights must be positive")
    adj = _adjacency(net, np.asarray(weights, dtype=float))
    first = _dijkstra(net, adj, origin, destination)
    if first is None:
        return []
    accepted: list[tuple[float, tuple[str, ...]]] = [first]
    candidates: list[tuple[float, tuple[str, ...]]] = []
    seen: set[tuple[str, ...]] = {first[1]}
    while len(accepted) < k:
        _, prev = accepted[-1]
        for i in range(len(prev) - 1):
            spur = prev[i]
            root = prev[: i + 1]
            banned_arcs = {
                (p[i], p[i + 1])
                for _, p in accepted
                if len(p) > i + 1 and p[: i + 1] == root
            }
            banned_nodes = frozenset(root[:-1])
            res = _dijkstra(
                net, adj, spur, destination, banned_nodes, frozenset(banned_arcs)
            )
            if res is None:
                continue
            _, spur_path = res
            total = root[:-1] + spur_path
            if total in seen:
                continue
            seen.add(total)
            heapq.heappush(candidates, (_path_cost(net, adj, total), total))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates))
    return [route_from_nodes(net, list(p)) for _, p in accepted]


def diverse_routes(
    net: RoadNetwork,
    request: VehicleRequest,
    base_routes: list[Route],
    count: int,
    weights: np.ndarray,
    penalty: float = DIVERSITY_PENALTY,
    max_iterations: int = 25,
) -> list[Route]:
    """Penalty-search alternatives to the base routes.

    Each iteration multiplies the working weight of every edge used by an
    accepted route by ``penalty`` and re-runs the cheapest-path search;
    compounding penalties eventually force any existing alternative to
    surface. Stops after ``count`` new distinct routes, or at the
    iteration cap when only duplicates come back.
    """
    if not base_routes:
        raise ValueError("diverse search needs at least one base route")
    working = np.asarray(weights, dtype=float).copy()
    accepted_paths = {r.nodes for r in base_routes}
    used_edges = {ei for r in base_routes for ei in r.edge_indices}
    out: list[Route] = []
    for _ in range(max_iterations):
        if len(out) >= count:
            break
        for ei in used_edges:
            working[ei] *= penalty
        adj = _adjacency(net, working)
        res = _dijkstra(net, adj, request.origin, request.destination)
        if res is None:
            break
        _, path = res
        if path in accepted_paths:
            continue
        route = route_from_nodes(net, list(path))
        accepted_paths.add(path)
        used_edges.update(route.edge_indices)
        out.append(route)
    return out


# --- objective evaluation ---------------------------------------------


def route_travel_time(route: Route, predictions: np.ndarray) -> float:
    """Sum of predicted edge travel times along the route, in minutes."""
    predictions = np.asarray(predictions, dtype=float)
    if route.edge_indices and max(route.edge_indices) >= len(predictions):
        raise MissingPredictionError("predictions do not cover the route")
    return float(sum(predictions[i] for i in route.edge_indices))


def spatial_impact(
    route: Route,
    state: TrafficState,
    partition: RegionPartition,
    net: RoadNetwork,
    flow_increment: float,
) -> float:
    """Gini delta from adding one vehicle's flow along the route.

    The pre-increment Gini is taken as 0 when every load is zero (the
    uniform limit), so the first assignments on an empty network still
    compare fairly.
    """
    try:
        before = gini_traffic(region_load(state, partition, net))
    except ZeroMeanLoadError:
        before = 0.0
    flow = state.flow.copy()
    for ei in route.edge_indices:
        flow[ei] += flow_increment
    bumped = TrafficState(state.time_step, flow, state.speed, state.incident)
    after = gini_traffic(region_load(bumped, partition, net))
    return after - before


def demographic_impact(
    route: Route,
    demographics: SegmentDemographics,
    net: RoadNetwork,
    flow_increment: float,
) -> float:
    """Vulnerability-weighted traffic impact along the route.

    Each edge contributes weight * vulnerability of its from-node times
    the relative flow increase on the edge.
    """
    total = 0.0
    for ei in route.edge_indices:
        e = net.edges[ei]
        if not demographics.covers(e.from_node):
            raise MissingDemographicsError(f"no demographics for node {e.from_node!r}")
        impact = flow_increment / e.capacity
        total += demographics.weight[e.from_node] * demographics.vulnerability[e.from_node] * impact
    return total


def emissions_estimate(route: Route, travel_times: np.ndarray, net: RoadNetwork) -> float:
    """Grams-CO2 proxy: distance * base rate * congestion factor per edge."""
    travel_times = np.asarray(travel_times, dtype=float)
    if route.edge_indices and max(route.edge_indices) >= len(travel_times):
        raise MissingStateError("travel times do not cover the route")
    total = 0.0
    for ei in route.edge_indices:
        e = net.edges[ei]
        factor = travel_times[ei] / e.free_flow_time
        total += e.distance * EMISSION_BASE_G_PER_MILE * factor
    return total


def route_utility(
    objs: RouteObjectives,
    weights: ObjectiveWeights,
    normalization: tuple[np.ndarray, np.ndarray] | None = None,
) -> float:
    """Weighted sum of the four objectives.

    ``normalization`` is an optional (min, range) pair over the candidate
    set; components with zero range contribute zero.
    """
    x = objs.as_vector()
    if normalization is not None:
        lo, rng = normalization
        x = np.where(rng > 0.0, (x - lo) / np.where(rng > 0.0, rng, 1.0), 0.0)
    return float(np.dot(np.array(weights.beta), x))


def scalarize(time_obj: float, fairness_obj: float, lam: float) -> float:
    """Convex combination lam * time + (1 - lam) * fairness."""
    if not 0.0 <= lam <= 1.0:
        raise LambdaOutOfRangeError(f"lambda must be in [0,1], got {lam}")
    return lam * time_obj + (1.0 - lam) * fairness_obj


# --- Pareto selection --------------------------------------------------


@dataclass
class ParetoContext:
    """Ideal point and normalization ranges over a candidate set.

    ``weights`` rescales the normalized distance; a zero weight drops the
    objective from both dominance and distance (the pure unweighted
    context uses all four equally).
    """

    ideal: np.ndarray
    ranges: np.ndarray
    weights: np.ndarray = field(default_factory=lambda: np.ones(4))


def pareto_context(
    candidates: list[RouteObjectives], weights: tuple[float, ...] | None = None
) -> ParetoContext:
    if not candidates:
        raise NoCandidatesError("context requires at least one candidate")
    mat = np.stack([c.as_vector() for c in candidates])
    ideal = mat.min(axis=0)
    ranges = mat.max(axis=0) - ideal
    w = np.ones(4) if weights is None else np.array(weights, dtype=float)
    if np.any(w < 0.0):
        raise NegativeWeightError("objective weights must be non-negative")
    if w.sum() == 0.0:
        w = np.ones(4)
    return ParetoContext(ideal, ranges, w / w.sum())


def _dominates(a: np.ndarray, b: np.ndarray, active: np.ndarray) -> bool:
    """a dominates b when a <= b on every active objective and < on one."""
    return bool(np.all(a[active] <= b[active]) and np.any(a[active] < b[active]))


def pareto_select(
    candidates: list[tuple[Route, RouteObjectives]], context: ParetoContext
) -> tuple[Route, RouteObjectives]:
    """Pick the Pareto-front candidate nearest the ideal point.

    Distance is Euclidean in min-max-normalized objective space, weighted
    by the context. Ties break on lower travel time, then route id.

    Raises:
        NoCandidatesError: empty candidate list.
    """
    if not candidates:
        raise NoCandidatesError("selection requires at least one candidate")
    mat = np.stack([o.as_vector() for _, o in candidates])
    active = context.weights > 0.0
    n = len(candidates)
    front = [
        i
        for i in range(n)
        if not any(_dominates(mat[j], mat[i], active) for j in range(n) if j != i)
    ]
    safe = np.where(context.ranges > 0.0, context.ranges, 1.0)
    normed = (mat - context.ideal) / safe
    normed[:, context.ranges <= 0.0] = 0.0
    ideal_hat = np.zeros(4)
    dists = np.sqrt(((normed - ideal_hat) ** 2 * context.weights).sum(axis=1))
    best = min(
        front,
        key=lambda i: (dists[i], candidates[i][1].travel_time, candidates[i][0].route_id),
    )
    return candidates[best]


# --- assignment --------------------------------------------------------


@dataclass
class Assignment:
    vehicle_id: int
    route: Route | None  # None when unreachable
    objectives: RouteObjectives | None

    @property
    def reachable(self) -> bool:
        return self.route is not None


def assign_routes(
    requests: list[VehicleRequest],
    state: TrafficState,
    predictions: np.ndarray,
    weights: ObjectiveWeights,
    partition: RegionPartition,
    net: RoadNetwork,
    demographics: SegmentDemographics,
    k: int = 3,
    diverse_count: int = 2,
    flow_increment: float = 12.0,
    update_state: bool = True,
) -> tuple[list[Assignment], np.ndarray]:
    """Sequential fairness-aware assignment over requests in vehicle order.

    Every chosen route immediately adds ``flow_increment`` vehicles/hour
    to its edges, so later vehicles see the updated loads. Unreachable
    requests are recorded and skipped. Returns the assignments and the
    final working flow vector.
    """
    predictions = np.asarray(predictions, dtype=float)
    working = TrafficState(state.time_step, state.flow.copy(), state.speed, state.incident)
    out: list[Assignment] = []
    for req in sorted(requests, key=lambda r: r.vehicle_id):
        req.validate(net)
        base = k_shortest_paths(net, req.origin, req.destination, k, predictions)
        if not base:
            out.append(Assignment(req.vehicle_id, None, None))
            continue
        extra = diverse_routes(net, req, base, diverse_count, predictions)
        cands: list[tuple[Route, RouteObjectives]] = []
        for route in base + extra:
            objs = RouteObjectives(
                travel_time=route_travel_time(route, predictions),
                spatial_impact=spatial_impact(
                    route, working, partition, net, flow_increment
                ),
                demographic_impact=demographic_impact(
                    route, demographics, net, flow_increment
                ),
                emissions=emissions_estimate(route, predictions, net),
            )
            cands.append((route, objs))
        ctx = pareto_context([o for _, o in cands], weights.beta)
        route, objs = pareto_select(cands, ctx)
        if update_state:
            for ei in route.edge_indices:
                working.flow[ei] += flow_increment
        out.append(Assignment(req.vehicle_id, route, objs))
    return out, working.flow


def assignments_csv_rows(assignments: list[Assignment], net: RoadNetwork) -> list[list[str]]:
    """Rows for the assignment output CSV (header included)."""
    rows = [
        ["vehicle_id", "route_edges", "travel_time_min", "gini_delta", "demo_impact", "emissions_g"]
    ]
    for a in assignments:
        if not a.reachable:
            rows.append([str(a.vehicle_id), "", "", "", "", ""])
            continue
        rows.append(
            [
                str(a.vehicle_id),
                ";".join(net.edges[i].edge_id for i in a.route.edge_indices),
                repr(a.objectives.travel_time),
                repr(a.objectives.spatial_impact),
                repr(a.objectives.demographic_impact),
                repr(a.objectives.emissions),
            ]
        )
    return rows
