"""Fairness and efficiency metrics over regional traffic loads.

All functions are pure and operate on plain numpy vectors, so they can
be called concurrently and cross-checked against brute-force oracles.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import (
    AllZeroError,
    EmptyRegionError,
    LengthMismatchError,
    NegativeWeightError,
    NotAllZeroError,
    SingleRegionError,
    ZeroMeanLoadError,
)
from .network import RegionPartition, RoadNetwork, TrafficState


def region_load(
    state: TrafficState, partition: RegionPartition, net: RoadNetwork
) -> np.ndarray:
    """Mean flow/capacity ratio per region, ordered by region id.

    Edges are attributed to the region of their from-node; the divisor is
    the region's edge count.

    Raises:
        EmptyRegionError: a region has no attributed edges.
    """
    if len(state.flow) != net.num_edges:
        raise ValueError("state must cover every edge")
    ratios = state.flow / net.capacities()
    loads = []
    for rid in partition.region_ids:
        idx = partition.edges_of_region(net, rid)
        if not idx:
            raise EmptyRegionError(f"region {rid} has no attributed edges")
        loads.append(float(np.mean(ratios[idx])))
    return np.array(loads)


def gini_traffic(loads: np.ndarray) -> float:
    """Gini coefficient of the regional load distribution, in [0, 1).

    Computed as the double sum over all ordered region pairs of absolute
    load differences, scaled by 1 / (2 K^2 mu).

    Raises:
        SingleRegionError: fewer than two regions.
        ZeroMeanLoadError: mean load is zero.
    """
    loads = np.asarray(loads, dtype=float)
    k = len(loads)
    if k < 2:
        raise SingleRegionError("gini needs at least two regions")
    mu = float(loads.mean())
    if mu <= 0.0:
        raise ZeroMeanLoadError("gini undefined for zero mean load")
    diff_sum = float(np.abs(loads[:, None] - loads[None, :]).sum())
    return diff_sum / (2.0 * k * k * mu)


def gini_temporal(series: np.ndarray, weights: np.ndarray, strict: bool = False) -> float:
    """Time-weighted mean of per-step Gini values: (1/T) sum_t w_t G_t.

    Raises:
        LengthMismatchError: series and weights differ in length.
        NotAllZeroError: all weights zero, in strict mode. Otherwise a
            warning is emitted and 0.0 returned.
    """
    series = np.asarray(series, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if series.shape != weights.shape:
        raise LengthMismatchError("series and weights must have the same length")
    if np.any(weights < 0.0):
        raise NegativeWeightError("temporal weights must be non-negative")
    if not np.any(weights > 0.0):
        if strict:
            raise NotAllZeroError("temporal weights are all zero")
        warnings.warn("temporal weights are all zero", stacklevel=2)
        return 0.0
    return float(np.sum(weights * series) / len(series))


def jain_index(loads: np.ndarray) -> float:
    """Jain's fairness index (sum x)^2 / (K sum x^2), in (0, 1].

    Raises:
        AllZeroError: every load is zero.
    """
    loads = np.asarray(loads, dtype=float)
    sq_sum = float(np.sum(loads**2))
    if sq_sum == 0.0:
        raise AllZeroError("Jain's index undefined for all-zero loads")
    return float(np.sum(loads)) ** 2 / (len(loads) * sq_sum)


def combined_fairness(
    spatial: float,
    temporal: float,
    demographic: float,
    weights: tuple[float, float, float],
) -> float:
    """Weighted combination of the spatial, temporal and demographic terms."""
    a_s, a_t, a_d = weights
    if a_s < 0.0 or a_t < 0.0 or a_d < 0.0:
        raise NegativeWeightError("fairness weights must be non-negative")
    return a_s * spatial + a_t * temporal + a_d * demographic


def fairness_score(gini: float) -> float:
    """Convenience score where higher is fairer: 1 - Gini."""
    return 1.0 - gini
