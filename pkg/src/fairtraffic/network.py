"""Road-network graph model, regional partitioning, and file ingestion.

Nodes are road segments or intersections (sensor locations in the
METR-LA-style fixtures); edges are directed connections carrying a
free-flow travel time in minutes, an hourly vehicle capacity, and a
length in miles. Undirected adjacencies from a topology file are stored
as two directed edges.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import (
    DanglingEdgeError,
    EmptyRegionError,
    MalformedRowError,
    NonMonotonicTimestampsError,
    NonPositiveWeightError,
    TooFewNodesError,
    UncoveredNodeError,
)

DEFAULT_SPEED_LIMIT_MPH = 60.0
DEFAULT_CAPACITY_VPH = 1800.0

SENSOR_CSV_HEADER = ["timestamp", "sensor_id", "speed_mph"]
TOPOLOGY_CSV_HEADER = ["from", "to", "distance_miles"]
REGIONS_CSV_HEADER = ["sensor_id", "region_id", "vulnerability", "weight"]


@dataclass(frozen=True)
class Edge:
    """Directed road connection with physical attributes."""

    edge_id: str
    from_node: str
    to_node: str
    free_flow_time: float  # minutes
    capacity: float  # vehicles per hour
    distance: float  # miles

    def congestion_time(self, flow: float, alpha: float = 0.15, beta: float = 4.0) -> float:
        """Volume-delay travel time in minutes at the given hourly flow."""
        return self.free_flow_time * (1.0 + alpha * (flow / self.capacity) ** beta)


@dataclass
class RoadNetwork:
    """Validated directed graph with an adjacency index.

    ``out_edges[i]`` / ``in_edges[i]`` list edge indices incident to node
    index ``i``. The structure is read-only after construction.
    """

    nodes: list[str]
    edges: list[Edge]
    node_index: dict[str, int] = field(repr=False)
    out_edges: list[list[int]] = field(repr=False)
    in_edges: list[list[int]] = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_index(self, edge_id: str) -> int:
        for i, e in enumerate(self.edges):
            if e.edge_id == edge_id:
                return i
        raise KeyError(edge_id)

    def free_flow_times(self) -> np.ndarray:
        return np.array([e.free_flow_time for e in self.edges], dtype=float)

    def capacities(self) -> np.ndarray:
        return np.array([e.capacity for e in self.edges], dtype=float)

    def distances(self) -> np.ndarray:
        return np.array([e.distance for e in self.edges], dtype=float)

    def edge_endpoints(self) -> np.ndarray:
        """(E, 2) array of (from, to) node indices."""
        return np.array(
            [[self.node_index[e.from_node], self.node_index[e.to_node]] for e in self.edges],
            dtype=int,
        )

    def node_static_features(self) -> np.ndarray:
        """(N, 2) per-node attributes: in/out degree scaled by the max degree."""
        indeg = np.array([len(self.in_edges[i]) for i in range(self.num_nodes)], dtype=float)
        outdeg = np.array([len(self.out_edges[i]) for i in range(self.num_nodes)], dtype=float)
        scale = max(1.0, indeg.max(initial=0.0), outdeg.max(initial=0.0))
        return np.stack([indeg / scale, outdeg / scale], axis=1)

    def edge_static_features(self) -> np.ndarray:
        """(E, 3) per-edge attributes: distance, capacity/1000, free-flow time."""
        return np.stack(
            [self.distances(), self.capacities() / 1000.0, self.free_flow_times()], axis=1
        )

    def to_json(self) -> str:
        """Serialize with edges normalized by edge id (round-trip stable)."""
        payload = {
            "nodes": list(self.nodes),
            "edges": [
                {
                    "edge_id": e.edge_id,
                    "from": e.from_node,
                    "to": e.to_node,
                    "free_flow_time": e.free_flow_time,
                    "capacity": e.capacity,
                    "distance": e.distance,
                }
                for e in sorted(self.edges, key=lambda e: e.edge_id)
            ],
        }
        return json.dumps(payload, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RoadNetwork":
        payload = json.loads(text)
        edges = [
            (e["edge_id"], e["from"], e["to"], e["free_flow_time"], e["capacity"], e["distance"])
            for e in payload["edges"]
        ]
        return build_network(payload["nodes"], edges)


def build_network(nodes: list[str], edges: list[tuple]) -> RoadNetwork:
    """Validate nodes/edges and build the adjacency index.

    Each edge tuple is ``(edge_id, from, to, free_flow_time, capacity)``
    with an optional trailing ``distance`` in miles. When the distance is
    omitted it defaults to the free-flow time at 60 mph (1 mile/minute).

    Raises:
        DanglingEdgeError: an endpoint is not a declared node.
        NonPositiveWeightError: capacity or free-flow time <= 0.
    """
    node_list = [str(n) for n in nodes]
    node_index = {n: i for i, n in enumerate(node_list)}
    if len(node_index) != len(node_list):
        raise ValueError("duplicate node ids")

    built: list[Edge] = []
    for spec in edges:
        if len(spec) == 5:
            edge_id, u, v, fft, cap = spec
            dist = float(fft)  # free-flow minutes at 60 mph = miles
        elif len(spec) == 6:
            edge_id, u, v, fft, cap, dist = spec
        else:
            raise ValueError(f"edge tuple must have 5 or 6 fields, got {len(spec)}")
        u, v = str(u), str(v)
        if u not in node_index:
            raise DanglingEdgeError(f"edge {edge_id!r} references undeclared node {u!r}")
        if v not in node_index:
            raise DanglingEdgeError(f"edge {edge_id!r} references undeclared node {v!r}")
        if float(fft) <= 0.0:
            raise NonPositiveWeightError(f"edge {edge_id!r} free_flow_time must be > 0")
        if float(cap) <= 0.0:
            raise NonPositiveWeightError(f"edge {edge_id!r} capacity must be > 0")
        built.append(Edge(str(edge_id), u, v, float(fft), float(cap), float(dist)))

    out_edges: list[list[int]] = [[] for _ in node_list]
    in_edges: list[list[int]] = [[] for _ in node_list]
    for i, e in enumerate(built):
        out_edges[node_index[e.from_node]].append(i)
        in_edges[node_index[e.to_node]].append(i)

    return RoadNetwork(node_list, built, node_index, out_edges, in_edges)


def network_density(net: RoadNetwork, mode: str = "undirected") -> float:
    """Edge density in [0, 1].

    Undirected mode counts unordered node pairs connected in either
    direction against |V|(|V|-1)/2; directed mode counts directed edges
    against |V|(|V|-1).

    Raises:
        TooFewNodesError: fewer than two nodes.
    """
    n = net.num_nodes
    if n < 2:
        raise TooFewNodesError("density needs at least 2 nodes")
    if mode == "directed":
        return net.num_edges / (n * (n - 1))
    if mode == "undirected":
        pairs = {frozenset((e.from_node, e.to_node)) for e in net.edges if e.from_node != e.to_node}
        return len(pairs) / (n * (n - 1) / 2)
    raise ValueError(f"unknown mode {mode!r}")


@dataclass
class RegionPartition:
    """Disjoint cover of the node set, one region per federated client."""

    region_ids: list[int]
    members: dict[int, list[str]]
    region_of: dict[str, int]

    @property
    def num_regions(self) -> int:
        return len(self.region_ids)

    def size(self, region_id: int) -> int:
        return len(self.members[region_id])

    def edges_of_region(self, net: RoadNetwork, region_id: int) -> list[int]:
        """Edge indices attributed to the region of their from-node."""
        return [
            i for i, e in enumerate(net.edges) if self.region_of[e.from_node] == region_id
        ]


def assign_regions(
    net: RoadNetwork,
    mapping: dict[str, int],
    expected_regions: int | None = None,
) -> RegionPartition:
    """Build a partition from a total node -> region mapping.

    Raises:
        UncoveredNodeError: a node is missing from the mapping.
        EmptyRegionError: ``expected_regions`` is given and some region id
            in [0, expected_regions) has no members.
    """
    members: dict[int, list[str]] = {}
    region_of: dict[str, int] = {}
    for node in net.nodes:
        if node not in mapping:
            raise UncoveredNodeError(f"node {node!r} has no region assignment")
        rid = int(mapping[node])
        members.setdefault(rid, []).append(node)
        region_of[node] = rid
    if expected_regions is not None:
        for rid in range(expected_regions):
            if rid not in members or not members[rid]:
                raise EmptyRegionError(f"region {rid} has no nodes")
    region_ids = sorted(members)
    return RegionPartition(region_ids, members, region_of)


@dataclass
class SegmentDemographics:
    """Per-node importance weight and socioeconomic vulnerability score."""

    weight: dict[str, float]
    vulnerability: dict[str, float]

    def __post_init__(self) -> None:
        for node, v in self.vulnerability.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"vulnerability of {node!r} must be in [0,1], got {v}")
        for node, w in self.weight.items():
            if w < 0.0:
                raise ValueError(f"weight of {node!r} must be >= 0, got {w}")

    def covers(self, node: str) -> bool:
        return node in self.weight and node in self.vulnerability


@dataclass
class TrafficState:
    """Dynamic per-edge traffic state at one time step."""

    time_step: int
    flow: np.ndarray  # vehicles per hour, shape (E,)
    speed: np.ndarray  # mph, shape (E,)
    incident: np.ndarray | None = None  # 0/1 flags, shape (E,)

    def __post_init__(self) -> None:
        self.flow = np.asarray(self.flow, dtype=float)
        self.speed = np.asarray(self.speed, dtype=float)
        if self.flow.shape != self.speed.shape:
            raise ValueError("flow and speed must have one record per edge")
        if np.any(self.flow < 0.0):
            raise ValueError("flows must be non-negative")
        if np.any(self.speed < 0.0):
            raise ValueError("speeds must be non-negative")
        if self.incident is None:
            self.incident = np.zeros_like(self.flow)

    def travel_times(self, net: RoadNetwork) -> np.ndarray:
        """Per-edge travel time in minutes implied by speed, floored at free flow."""
        dist = net.distances()
        fft = net.free_flow_times()
        with np.errstate(divide="ignore"):
            t = np.where(self.speed > 0.0, 60.0 * dist / np.maximum(self.speed, 1e-12), np.inf)
        return np.maximum(t, fft)

    def node_features(self, net: RoadNetwork) -> np.ndarray:
        """(N, 4) observation vector per node: density, speed, queue, incident.

        Node values average the node's incident edges (in and out);
        isolated nodes get zeros. Speeds are scaled by 80 mph.
        """
        n = net.num_nodes
        caps = net.capacities()
        density = self.flow / caps
        speed = self.speed / 80.0
        queue = np.maximum(0.0, self.flow - caps) / caps
        inc = np.asarray(self.incident, dtype=float)
        feats = np.zeros((n, 4))
        counts = np.zeros(n)
        ends = net.edge_endpoints()
        per_edge = np.stack([density, speed, queue, inc], axis=1)
        for col in (0, 1):
            np.add.at(feats, ends[:, col], per_edge)
            np.add.at(counts, ends[:, col], 1.0)
        mask = counts > 0
        feats[mask] /= counts[mask, None]
        return feats


def free_flow_state(net: RoadNetwork, time_step: int = 0) -> TrafficState:
    """Empty-network state: zero flow, free-flow speeds."""
    dist = net.distances()
    fft = net.free_flow_times()
    speed = 60.0 * dist / fft
    return TrafficState(time_step, np.zeros(net.num_edges), speed)


@dataclass
class SensorSeries:
    """Time-ordered speed readings for one sensor. NaN marks a gap."""

    sensor_id: str
    timestamps: list[datetime]
    speeds: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)


def _interpolate_short_gaps(speeds: np.ndarray, max_gap: int = 3) -> np.ndarray:
    """Linearly fill interior NaN runs of length <= max_gap."""
    out = speeds.copy()
    n = len(out)
    i = 0
    while i < n:
        if not math.isnan(out[i]):
            i += 1
            continue
        j = i
        while j < n and math.isnan(out[j]):
            j += 1
        run = j - i
        if 0 < i and j < n and run <= max_gap:
            lo, hi = out[i - 1], out[j]
            for k in range(run):
                out[i + k] = lo + (hi - lo) * (k + 1) / (run + 1)
        i = j
    return out


def ingest_sensor_csv(path: str, zero_is_missing: bool = True) -> list[SensorSeries]:
    """Parse a sensor CSV into per-sensor series sorted by sensor id.

    Schema: header ``timestamp,sensor_id,speed_mph`` with ISO-8601
    timestamps. Empty speed fields (and zeros, when ``zero_is_missing``)
    become gaps; gaps spanning at most 3 steps are linearly interpolated,
    longer ones stay NaN and are excluded from training batches.

    Raises:
        MalformedRowError: wrong column count or unparsable value.
        NonMonotonicTimestampsError: timestamps not strictly increasing
            for some sensor.
    """
    rows: dict[str, list[tuple[datetime, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SENSOR_CSV_HEADER:
            raise MalformedRowError(f"expected header {SENSOR_CSV_HEADER}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise MalformedRowError(f"line {lineno}: expected 3 columns, got {len(row)}")
            ts_raw, sensor_id, speed_raw = row
            try:
                ts = datetime.fromisoformat(ts_raw)
            except ValueError as exc:
                raise MalformedRowError(f"line {lineno}: bad timestamp {ts_raw!r}") from exc
            if speed_raw.strip() == "":
                speed = math.nan
            else:
                try:
                    speed = float(speed_raw)
                except ValueError as exc:
                    raise MalformedRowError(f"line {lineno}: bad speed {speed_raw!r}") from exc
                if speed < 0.0:
                    raise MalformedRowError(f"line {lineno}: negative speed {speed}")
                if zero_is_missing and speed == 0.0:
                    speed = math.nan
            rows.setdefault(sensor_id, []).append((ts, speed))

    series = []
    for sensor_id in sorted(rows):
        readings = rows[sensor_id]
        for (a, _), (b, _) in zip(readings, readings[1:]):
            if b <= a:
                raise NonMonotonicTimestampsError(
                    f"sensor {sensor_id!r}: {b.isoformat()} not after {a.isoformat()}"
                )
        speeds = _interpolate_short_gaps(np.array([s for _, s in readings], dtype=float))
        series.append(SensorSeries(sensor_id, [t for t, _ in readings], speeds))
    return series


def read_topology_csv(path: str) -> list[tuple[str, str, float]]:
    """Parse ``from,to,distance_miles`` rows (undirected sensor pairs)."""
    out: list[tuple[str, str, float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TOPOLOGY_CSV_HEADER:
            raise MalformedRowError(f"expected header {TOPOLOGY_CSV_HEADER}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise MalformedRowError(f"line {lineno}: expected 3 columns, got {len(row)}")
            try:
                dist = float(row[2])
            except ValueError as exc:
                raise MalformedRowError(f"line {lineno}: bad distance {row[2]!r}") from exc
            out.append((row[0], row[1], dist))
    return out


def network_from_topology(
    rows: list[tuple[str, str, float]],
    distance_threshold: float = 1.0,
    speed_limit_mph: float = DEFAULT_SPEED_LIMIT_MPH,
    capacity_vph: float = DEFAULT_CAPACITY_VPH,
) -> RoadNetwork:
    """Build a network from pairwise sensor distances.

    An undirected adjacency exists between sensors whose distance is at
    most ``distance_threshold`` miles; each adjacency is stored as two
    directed edges. Free-flow time is distance / speed limit.
    """
    nodes = sorted({r[0] for r in rows} | {r[1] for r in rows})
    seen: set[frozenset[str]] = set()
    edges: list[tuple] = []
    for u, v, dist in rows:
        if u == v or dist > distance_threshold:
            continue
        key = frozenset((u, v))
        if key in seen:
            continue
        seen.add(key)
        fft = dist / speed_limit_mph * 60.0
        a, b = sorted((u, v))
        edges.append((f"{a}->{b}", a, b, fft, capacity_vph, dist))
        edges.append((f"{b}->{a}", b, a, fft, capacity_vph, dist))
    return build_network(nodes, edges)


def read_regions_csv(path: str) -> tuple[dict[str, int], SegmentDemographics]:
    """Parse ``sensor_id,region_id,vulnerability,weight`` rows."""
    mapping: dict[str, int] = {}
    weight: dict[str, float] = {}
    vulnerability: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REGIONS_CSV_HEADER:
            raise MalformedRowError(f"expected header {REGIONS_CSV_HEADER}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise MalformedRowError(f"line {lineno}: expected 4 columns, got {len(row)}")
            try:
                mapping[row[0]] = int(row[1])
                vulnerability[row[0]] = float(row[2])
                weight[row[0]] = float(row[3])
            except ValueError as exc:
                raise MalformedRowError(f"line {lineno}: {exc}") from exc
    return mapping, SegmentDemographics(weight, vulnerability)
