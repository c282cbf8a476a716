"""Deployment, noisy ranging graph, connectivity, and distance completion."""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import (
    DISTANCE_DOMAIN,
    POWER_DOMAIN,
    ChannelParams,
    estimate_ranges,
    received_power,
)

__all__ = [
    "Deployment",
    "NetworkGraph",
    "NoiseSpec",
    "GraphDisconnectedError",
    "CollinearAnchorsError",
    "anchors_collinear",
    "deploy_network",
    "connectivity_threshold",
    "connectivity_range",
    "build_graph",
    "is_connected",
    "components",
    "complete_midrange",
    "DEFAULT_FILL_WEIGHT",
    "shortest_path_complete",
    "write_graph_csv",
    "read_graph_csv",
]


# completed entries weigh this fraction of the weakest measured link; larger
# values bias well-measured networks towards the mid-range value
DEFAULT_FILL_WEIGHT = 1e-5


class GraphDisconnectedError(ValueError):
    """The ranging graph has more than one component."""


class CollinearAnchorsError(ValueError):
    """Anchors do not span the plane."""


@dataclass(frozen=True)
class NoiseSpec:
    """Ranging noise: ``variance`` is m^2 in distance mode, W^2 in power mode."""

    mode: str = DISTANCE_DOMAIN
    variance: float = 0.02

    def __post_init__(self):
        if self.mode not in (DISTANCE_DOMAIN, POWER_DOMAIN):
            raise ValueError(f"unknown noise mode {self.mode!r}")
        if self.variance < 0:
            raise ValueError("noise variance must be non-negative")

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass
class Deployment:
    sensor_positions: np.ndarray
    anchor_positions: np.ndarray
    active: np.ndarray
    tx_range: np.ndarray  # sensors first, then anchors
    area: tuple[float, float] = (100.0, 100.0)

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_positions)

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_positions)

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    def with_active(self, active) -> "Deployment":
        return replace(self, active=np.asarray(active, dtype=bool))

    def with_range(self, tx_range) -> "Deployment":
        r = np.broadcast_to(np.asarray(tx_range, dtype=float), (self.n_sensors + self.n_anchors,))
        return replace(self, tx_range=r.copy())


@dataclass
class NetworkGraph:
    """Ranging graph over active sensors (first) and anchors (last ``n_anchors``).

    ``ranges`` holds NaN where no estimate exists.  After `complete_midrange`
    the missing entries are filled and flagged in ``filled``; ``adjacency``
    always describes measured links only.
    """

    adjacency: np.ndarray
    weights: np.ndarray
    ranges: np.ndarray
    n_anchors: int
    anchor_positions: np.ndarray
    true_positions: np.ndarray | None = None
    sensor_ids: np.ndarray | None = None
    filled: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.n_nodes - self.n_anchors

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))


def anchors_collinear(points, rel_tol: float = 1e-9) -> bool:
    """True when the points do not span two dimensions.

    Uses the ratio of the singular values of the centred coordinates, so
    ``rel_tol`` doubles as a well-spread threshold for random layouts.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        return True
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    return bool(s[0] == 0 or s[1] / s[0] <= rel_tol)


def _perimeter_anchors(m: int, area: tuple[float, float]) -> np.ndarray:
    w, h = area
    perim = 2 * (w + h)
    out = []
    for s in (np.arange(m) + 0.5) * perim / m:
        if s < w:
            out.append((s, 0.0))
        elif s < w + h:
            out.append((w, s - w))
        elif s < 2 * w + h:
            out.append((w - (s - w - h), h))
        else:
            out.append((0.0, h - (s - 2 * w - h)))
    return np.array(out)


def deploy_network(
    n_sensors: int,
    n_anchors: int,
    rng: np.random.Generator,
    area: tuple[float, float] = (100.0, 100.0),
    anchor_layout="random",
    tx_range: float = 20.0,
    spread_tol: float = 0.1,
    max_retries: int = 100,
) -> Deployment:
    """Uniform random sensors in ``area`` plus anchors per ``anchor_layout``.

    ``anchor_layout`` is ``"random"`` (uniform, redrawn while the anchors are
    nearly collinear), ``"perimeter"`` or an explicit ``(M, 2)`` array.
    Anchors are drawn before sensors, so deployments sharing a seed share
    their first sensor positions regardless of ``n_sensors``.
    """
    if n_sensors < 1:
        raise ValueError("need at least one sensor")
    w, h = area
    if isinstance(anchor_layout, str):
        if n_anchors < 3:
            raise CollinearAnchorsError("localization needs at least 3 anchors")
        if anchor_layout == "random":
            for _ in range(max_retries):
                anchors = rng.uniform((0.0, 0.0), (w, h), size=(n_anchors, 2))
                if not anchors_collinear(anchors, spread_tol):
                    break
            else:
                raise CollinearAnchorsError(
                    f"no well-spread anchor draw after {max_retries} retries"
                )
        elif anchor_layout == "perimeter":
            anchors = _perimeter_anchors(n_anchors, area)
        else:
            raise ValueError(f"unknown anchor layout {anchor_layout!r}")
    else:
        anchors = np.asarray(anchor_layout, dtype=float).reshape(-1, 2)
        if len(anchors) < 3 or anchors_collinear(anchors):
            raise CollinearAnchorsError("anchors must be at least 3 non-collinear points")
        if np.any(anchors < 0) or np.any(anchors > (w, h)):
            raise ValueError("anchors must lie inside the deployment area")
    sensors = rng.uniform((0.0, 0.0), (w, h), size=(n_sensors, 2))
    return Deployment(
        sensor_positions=sensors,
        anchor_positions=anchors,
        active=np.ones(n_sensors, dtype=bool),
        tx_range=np.full(n_sensors + len(anchors), float(tx_range)),
        area=(float(w), float(h)),
    )


def connectivity_threshold(n_active: int, c: float = 1.0) -> float:
    """Range above which a unit-square random network is connected w.h.p.

    Returns ``sqrt(c * log(n_active) / n_active)`` in unit-square lengths.
    """
    if n_active < 2:
        raise ValueError("need at least two nodes")
    return math.sqrt(c * math.log(n_active) / n_active)


def connectivity_range(n_active: int, side: float, c: float = 1.0) -> float:
    """`connectivity_threshold` scaled to a square of side ``side`` metres."""
    return side * connectivity_threshold(n_active, c)


def _pairwise(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def build_graph(
    deployment: Deployment,
    channel: ChannelParams,
    noise: NoiseSpec,
    rng: np.random.Generator,
    samples_per_link: int = 1,
    exact_anchor_distances: bool = True,
) -> NetworkGraph:
    """Noisy single-hop ranging between active sensors and anchors.

    A pair is linked when it lies within both nodes' ranges.  Each link gets
    ``samples_per_link`` noisy observations fused by `estimate_ranges`; its
    weight is the inverse variance of the fused estimate (1 when noiseless).
    Power-domain links whose samples are all non-positive stay missing.
    """
    if samples_per_link < 1:
        raise ValueError("samples_per_link must be >= 1")
    act = np.flatnonzero(deployment.active)
    m = deployment.n_anchors
    pos = np.vstack((deployment.sensor_positions[act], deployment.anchor_positions))
    rng_r = np.concatenate((deployment.tx_range[act], deployment.tx_range[deployment.n_sensors:]))
    k = len(pos)
    n_a = k - m
    dist = _pairwise(pos)
    reach = np.minimum(rng_r[:, None], rng_r[None, :])

    is_anchor = np.zeros(k, dtype=bool)
    is_anchor[n_a:] = True
    anchor_pair = is_anchor[:, None] & is_anchor[None, :]

    iu, ju = np.triu_indices(k, 1)
    measured = dist[iu, ju] <= reach[iu, ju]
    if exact_anchor_distances:
        measured &= ~anchor_pair[iu, ju]
    li, lj = iu[measured], ju[measured]
    d_true = dist[li, lj]

    sigma = noise.std
    if noise.mode == DISTANCE_DOMAIN:
        clean = np.repeat(d_true[:, None], samples_per_link, axis=1)
    else:
        clean = np.repeat(np.atleast_1d(received_power(channel, d_true))[:, None], samples_per_link, axis=1)
    if sigma > 0 and clean.size:
        samples = clean + rng.normal(0.0, sigma, size=clean.shape)
    else:
        samples = clean
    if len(li):
        d_est, s_est, valid = estimate_ranges(samples, sigma, noise.mode, channel)
    else:
        d_est = s_est = np.zeros(0)
        valid = np.zeros(0, dtype=bool)

    ranges = np.full((k, k), np.nan)
    weights = np.zeros((k, k))
    li, lj, d_est, s_est = li[valid], lj[valid], d_est[valid], s_est[valid]
    w = np.where(s_est > 0, 1.0 / np.where(s_est > 0, s_est, 1.0) ** 2, 1.0)
    ranges[li, lj] = ranges[lj, li] = d_est
    weights[li, lj] = weights[lj, li] = w

    if exact_anchor_distances and m > 1:
        ai, aj = np.nonzero(np.triu(anchor_pair, 1))
        ranges[ai, aj] = ranges[aj, ai] = dist[ai, aj]
        w_anchor = w.max() if w.size else 1.0
        weights[ai, aj] = weights[aj, ai] = w_anchor

    return NetworkGraph(
        adjacency=weights > 0,
        weights=weights,
        ranges=ranges,
        n_anchors=m,
        anchor_positions=deployment.anchor_positions.copy(),
        true_positions=pos,
        sensor_ids=act,
    )


def components(adjacency) -> list[list[int]]:
    """Connected components by breadth-first traversal."""
    adj = np.asarray(adjacency, dtype=bool)
    k = adj.shape[0]
    seen = np.zeros(k, dtype=bool)
    comps = []
    for start in range(k):
        if seen[start]:
            continue
        seen[start] = True
        comp, queue = [], deque([start])
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in np.flatnonzero(adj[u] & ~seen):
                seen[v] = True
                queue.append(v)
        comps.append(sorted(comp))
    return comps


def is_connected(graph: NetworkGraph) -> bool:
    if graph.n_nodes == 0:
        return False
    return len(components(graph.adjacency)) == 1


def complete_midrange(graph: NetworkGraph, fill_weight_ratio: float = DEFAULT_FILL_WEIGHT) -> NetworkGraph:
    """Fill every missing range with the midpoint of the shortest and longest measured ranges.

    Filled entries get weight ``fill_weight_ratio * min(measured weight)``.

    Raises
    ------
    ValueError
        For a graph without edges.
    GraphDisconnectedError
        For a disconnected graph.
    """
    present = graph.adjacency
    if not present.any():
        raise ValueError("cannot complete a graph without edges")
    if not is_connected(graph):
        raise GraphDisconnectedError("refusing to complete a disconnected graph")
    measured = graph.ranges[present]
    mid = 0.5 * (measured.min() + measured.max())
    missing = ~present
    np.fill_diagonal(missing, False)

    ranges = graph.ranges.copy()
    weights = graph.weights.copy()
    ranges[missing] = mid
    weights[missing] = fill_weight_ratio * graph.weights[present].min()
    np.fill_diagonal(ranges, 0.0)
    return replace(graph, ranges=ranges, weights=weights, filled=missing)


def shortest_path_complete(graph: NetworkGraph) -> np.ndarray:
    """All-pairs shortest-path distances over the measured ranges (Floyd-Warshall)."""
    k = graph.n_nodes
    d = np.where(graph.adjacency, graph.ranges, np.inf)
    np.fill_diagonal(d, 0.0)
    for via in range(k):
        np.minimum(d, d[:, via, None] + d[None, via, :], out=d)
    if np.isinf(d).any():
        i, j = np.argwhere(np.isinf(d))[0]
        raise GraphDisconnectedError(f"node {j} is unreachable from node {i}")
    return d


def write_graph_csv(graph: NetworkGraph, path) -> Path:
    """Write the edge list ``(i, j, d_true, d_est, lambda)`` plus a ``.nodes.csv`` sidecar."""
    path = Path(path)
    truth = graph.true_positions
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "d_true", "d_est", "lambda"])
        for i, j in graph.edges():
            d_true = float(np.hypot(*(truth[i] - truth[j]))) if truth is not None else float("nan")
            w.writerow([i, j, repr(d_true), repr(float(graph.ranges[i, j])), repr(float(graph.weights[i, j]))])
    nodes = path.with_suffix(".nodes.csv")
    with open(nodes, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "role", "x", "y"])
        for i in range(graph.n_nodes):
            role = "anchor" if i >= graph.n_sensors else "sensor"
            if truth is not None:
                x, y = truth[i]
            elif role == "anchor":
                x, y = graph.anchor_positions[i - graph.n_sensors]
            else:
                x = y = float("nan")
            w.writerow([i, role, repr(float(x)), repr(float(y))])
    return path


def read_graph_csv(path, nodes_path=None) -> NetworkGraph:
    """Inverse of `write_graph_csv`.  Sensors must precede anchors in the node file."""
    path = Path(path)
    nodes_path = Path(nodes_path) if nodes_path else path.with_suffix(".nodes.csv")
    with open(nodes_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    roles = [r["role"] for r in rows]
    if any(a == "anchor" and b == "sensor" for a, b in zip(roles, roles[1:])):
        raise ValueError("sensor rows must precede anchor rows")
    k = len(rows)
    pos = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(k, 2)
    m = roles.count("anchor")
    ranges = np.full((k, k), np.nan)
    weights = np.zeros((k, k))
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            i, j = int(r["i"]), int(r["j"])
            ranges[i, j] = ranges[j, i] = float(r["d_est"])
            weights[i, j] = weights[j, i] = float(r["lambda"])
    truth = None if np.isnan(pos[: k - m]).any() else pos
    return NetworkGraph(
        adjacency=weights > 0,
        weights=weights,
        ranges=ranges,
        n_anchors=m,
        anchor_positions=pos[k - m:].copy(),
        true_positions=truth,
    )
