"""Deterministic desk-scale fixtures.

Everything here is seeded and reproducible: grid networks for scenario
runs, a diamond graph for routing tests, and a 207-sensor clustered
point cloud whose pairwise-distance file yields exactly 3,661 undirected
adjacencies at the default 1.0-mile threshold (the coordinates are
rescaled so the threshold knob lands between the 3,661st and 3,662nd
smallest distances).
"""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .network import (
    REGIONS_CSV_HEADER,
    SENSOR_CSV_HEADER,
    TOPOLOGY_CSV_HEADER,
    RegionPartition,
    RoadNetwork,
    SegmentDemographics,
    assign_regions,
    build_network,
)

METR_LA_SENSORS = 207
METR_LA_UNDIRECTED_EDGES = 3661
METR_LA_CLUSTER_SIZES = (41, 38, 36, 34, 33, 25)  # six clusters, 25..41 sensors


def grid_network(
    rows: int = 4,
    cols: int = 5,
    capacity: float = 600.0,
    link_miles: float = 0.5,
    speed_mph: float = 30.0,
) -> RoadNetwork:
    """Row-major grid with bidirectional links between 4-neighbors."""
    nodes = [f"n{r}_{c}" for r in range(rows) for c in range(cols)]
    fft = link_miles / speed_mph * 60.0
    edges = []
    for r in range(rows):
        for c in range(cols):
            u = f"n{r}_{c}"
            for dr, dc in ((0, 1), (1, 0)):
                rr, cc = r + dr, c + dc
                if rr < rows and cc < cols:
                    v = f"n{rr}_{cc}"
                    edges.append((f"{u}->{v}", u, v, fft, capacity, link_miles))
                    edges.append((f"{v}->{u}", v, u, fft, capacity, link_miles))
    return build_network(nodes, edges)


def grid_partition(net: RoadNetwork, k: int) -> RegionPartition:
    """Split the node list into k contiguous chunks of near-equal size."""
    n = net.num_nodes
    base = n // k
    rem = n % k
    mapping = {}
    pos = 0
    for rid in range(k):
        size = base + (1 if rid < rem else 0)
        for node in net.nodes[pos : pos + size]:
            mapping[node] = rid
        pos += size
    return assign_regions(net, mapping, expected_regions=k)


def uniform_demographics(net: RoadNetwork, seed: int = 0) -> SegmentDemographics:
    """Seeded vulnerabilities in [0,1] with unit importance weights."""
    rng = np.random.default_rng([seed, 23])
    vulnerability = {n: float(v) for n, v in zip(net.nodes, rng.uniform(0, 1, net.num_nodes))}
    weight = {n: 1.0 for n in net.nodes}
    return SegmentDemographics(weight, vulnerability)


def diamond_network() -> RoadNetwork:
    """Two disjoint origin->destination paths with costs 3 and 5 minutes."""
    nodes = ["O", "A", "B", "D"]
    edges = [
        ("O->A", "O", "A", 1.0, 600.0, 1.0),
        ("A->D", "A", "D", 2.0, 600.0, 2.0),
        ("O->B", "O", "B", 2.5, 600.0, 2.5),
        ("B->D", "B", "D", 2.5, 600.0, 2.5),
    ]
    return build_network(nodes, edges)


def _clustered_points(seed: int) -> tuple[np.ndarray, np.ndarray]:
    """207 sensor positions in six clusters; returns (points, cluster ids)."""
    rng = np.random.default_rng([seed, 31])
    centers = np.array(
        [
            [0.0, 0.0],
            [6.0, 1.0],
            [12.0, 0.5],
            [2.5, 6.0],
            [8.5, 6.5],
            [13.5, 6.0],
        ]
    )
    points = []
    labels = []
    for cid, size in enumerate(METR_LA_CLUSTER_SIZES):
        pts = centers[cid] + rng.normal(0.0, 1.4, size=(size, 2))
        points.append(pts)
        labels.extend([cid] * size)
    return np.vstack(points), np.array(labels)


def metr_la_style_files(
    outdir: str | Path,
    seed: int = 207,
    threshold: float = 1.0,
    csv_radius_factor: float = 1.3,
) -> dict:
    """Write topology and regions CSVs for the 207-sensor fixture.

    Coordinates are rescaled so that exactly ``METR_LA_UNDIRECTED_EDGES``
    sensor pairs fall within ``threshold`` miles; the topology file also
    lists nearby non-adjacent pairs so ingestion has to apply the
    threshold. Returns the paths plus the threshold to ingest with.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    points, labels = _clustered_points(seed)
    n = len(points)

    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    iu = np.triu_indices(n, k=1)
    pair_dists = np.sort(dist[iu])
    k = METR_LA_UNDIRECTED_EDGES
    lo, hi = pair_dists[k - 1], pair_dists[k]
    if not lo < hi:
        raise RuntimeError("degenerate fixture: tie at the edge-count boundary")
    scale = threshold / ((lo + hi) / 2.0)
    dist = dist * scale

    sensor_ids = [f"s{i:03d}" for i in range(n)]
    topo_path = outdir / "topology.csv"
    with open(topo_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TOPOLOGY_CSV_HEADER)
        cap = threshold * csv_radius_factor
        for i in range(n):
            for j in range(i + 1, n):
                if dist[i, j] <= cap:
                    writer.writerow([sensor_ids[i], sensor_ids[j], repr(float(dist[i, j]))])

    rng = np.random.default_rng([seed, 37])
    vuln = rng.uniform(0.0, 1.0, n)
    weight = rng.uniform(0.5, 2.0, n)
    regions_path = outdir / "regions.csv"
    with open(regions_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REGIONS_CSV_HEADER)
        for i in range(n):
            writer.writerow(
                [sensor_ids[i], int(labels[i]), repr(float(vuln[i])), repr(float(weight[i]))]
            )

    return {
        "topology": str(topo_path),
        "regions": str(regions_path),
        "threshold": threshold,
        "sensor_ids": sensor_ids,
        "cluster_sizes": list(METR_LA_CLUSTER_SIZES),
    }


def sensor_readings_csv(
    path: str | Path,
    sensor_ids: list[str],
    n_steps: int = 288,
    step_minutes: int = 5,
    seed: int = 0,
    start: datetime | None = None,
) -> str:
    """Daily speed curves at 5-minute resolution, one row per reading."""
    start = start or datetime(2012, 3, 1)
    rng = np.random.default_rng([seed, 41])
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SENSOR_CSV_HEADER)
        for sid in sensor_ids:
            base = rng.uniform(45.0, 70.0)
            for t in range(n_steps):
                ts = start + timedelta(minutes=step_minutes * t)
                minutes = (t * step_minutes) % 1440
                rush = np.exp(-((minutes - 480) ** 2) / (2 * 90**2)) + np.exp(
                    -((minutes - 1050) ** 2) / (2 * 90**2)
                )
                speed = max(5.0, base - 25.0 * rush + rng.normal(0.0, 2.0))
                writer.writerow([ts.isoformat(), sid, f"{speed:.2f}"])
    return str(path)
