"""Directed road network, depot-to-demand path vectors and the shortest-path oracle.

Edges are addressed internally by their position in the edge list; the public
edge ``id`` values define the deterministic tie-break order between equal-cost
paths (cost first, then the lexicographic sequence of edge ids).
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DanglingEndpoint,
    DuplicateId,
    InvalidOd,
    NonpositiveLength,
    SelfLoop,
    TooLarge,
    UnknownNode,
    Unreachable,
)

EDGE_FEATURE_DIM = 20
ROAD_CLASSES = (
    "motorway", "trunk", "primary", "secondary", "tertiary", "unclassified",
    "residential", "service", "living_street", "motorway_link", "trunk_link",
    "primary_link", "secondary_link", "tertiary_link",
)
MAX_ENUM_EDGES = 32


@dataclass(frozen=True)
class Edge:
    id: int
    src: str
    dst: str
    length: float
    features: np.ndarray = field(repr=False, compare=False)


class RoadNetwork:
    """Immutable directed graph with node-arc incidence and static edge features."""

    def __init__(self, nodes: Sequence[str], edges: Sequence[Edge], coords=None):
        self.nodes = list(nodes)
        self.edges = list(edges)
        self.coords = dict(coords or {})
        self.node_index = {v: i for i, v in enumerate(self.nodes)}
        self.edge_pos = {e.id: k for k, e in enumerate(self.edges)}
        self.src = np.array([self.node_index[e.src] for e in self.edges], dtype=int)
        self.dst = np.array([self.node_index[e.dst] for e in self.edges], dtype=int)
        self.lengths = np.array([e.length for e in self.edges], dtype=float)
        self.edge_ids = np.array([e.id for e in self.edges], dtype=int)
        if self.edges:
            self.features = np.vstack([e.features for e in self.edges]).astype(float)
        else:
            self.features = np.zeros((0, EDGE_FEATURE_DIM))
        out: list[list[int]] = [[] for _ in self.nodes]
        for k in sorted(range(len(self.edges)), key=lambda k: self.edges[k].id):
            out[self.src[k]].append(k)
        self.out_edges = [tuple(x) for x in out]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def incidence(self) -> np.ndarray:
        A = np.zeros((self.n_nodes, self.n_edges))
        cols = np.arange(self.n_edges)
        A[self.src, cols] = 1.0
        A[self.dst, cols] = -1.0
        return A

    @cached_property
    def adjacent_pairs(self) -> np.ndarray:
        """Unordered pairs of distinct edges sharing an endpoint, each listed once."""
        touching: list[set[int]] = [set() for _ in self.nodes]
        for k in range(self.n_edges):
            touching[self.src[k]].add(k)
            touching[self.dst[k]].add(k)
        pairs = set()
        for ks in touching:
            ks = sorted(ks)
            for a in range(len(ks)):
                for b in range(a + 1, len(ks)):
                    pairs.add((ks[a], ks[b]))
        if not pairs:
            return np.zeros((0, 2), dtype=int)
        return np.array(sorted(pairs), dtype=int)

    def check_node(self, v: str) -> int:
        try:
            return self.node_index[v]
        except KeyError:
            raise UnknownNode(f"unknown node {v!r}") from None

    def edges_between(self, u: str, v: str) -> list[int]:
        iu = self.check_node(u)
        iv = self.check_node(v)
        return [k for k in self.out_edges[iu] if self.dst[k] == iv]

    # serialization

    def to_json(self) -> dict:
        nodes = []
        for v in self.nodes:
            lat, lon = self.coords.get(v, (0.0, 0.0))
            nodes.append({"id": v, "lat": float(lat), "lon": float(lon)})
        edges = [
            {
                "id": int(e.id),
                "from": e.src,
                "to": e.dst,
                "length_m": float(e.length),
                "features": [float(x) for x in e.features],
            }
            for e in self.edges
        ]
        return {"nodes": nodes, "edges": edges}

    @classmethod
    def from_json(cls, doc: dict) -> "RoadNetwork":
        nodes = [n["id"] for n in doc["nodes"]]
        coords = {n["id"]: (n.get("lat", 0.0), n.get("lon", 0.0)) for n in doc["nodes"]}
        edges = [(e["id"], e["from"], e["to"], e["length_m"], e["features"]) for e in doc["edges"]]
        return build_network(nodes, edges, coords=coords)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "RoadNetwork":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def default_features(length: float) -> np.ndarray:
    f = np.zeros(EDGE_FEATURE_DIM)
    f[0] = length
    f[1] = 50.0
    f[5] = 1.0
    f[6 + ROAD_CLASSES.index("residential")] = 1.0
    return f


def build_network(nodes: Iterable, edges: Iterable, coords=None) -> RoadNetwork:
    """Validate raw nodes/edges and build a :class:`RoadNetwork`.

    ``edges`` holds tuples ``(id, from, to, length[, features])``; missing
    features default to a residential 50 km/h single-lane profile.
    """
    node_ids = [str(v) for v in nodes]
    seen = set()
    for v in node_ids:
        if v in seen:
            raise DuplicateId(f"duplicate node id {v!r}")
        seen.add(v)
    built = []
    edge_ids = set()
    for raw in edges:
        eid, u, v, length = raw[0], str(raw[1]), str(raw[2]), float(raw[3])
        feats = raw[4] if len(raw) > 4 and raw[4] is not None else None
        eid = int(eid)
        if eid in edge_ids:
            raise DuplicateId(f"duplicate edge id {eid}")
        edge_ids.add(eid)
        if u not in seen or v not in seen:
            raise DanglingEndpoint(f"edge {eid} references unknown node")
        if u == v:
            raise SelfLoop(f"edge {eid} is a self-loop at {u!r}")
        if not length > 0 or not math.isfinite(length):
            raise NonpositiveLength(f"edge {eid} has length {length}")
        f = default_features(length) if feats is None else np.asarray(feats, dtype=float)
        if f.shape != (EDGE_FEATURE_DIM,):
            raise ValueError(f"edge {eid}: expected {EDGE_FEATURE_DIM} features, got {f.shape}")
        built.append(Edge(eid, u, v, length, f))
    return RoadNetwork(node_ids, built, coords=coords)


@dataclass(frozen=True)
class OdSpec:
    origins: tuple
    dest: str

    def __post_init__(self):
        origins = tuple(str(o) for o in self.origins)
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "dest", str(self.dest))
        if not origins:
            raise InvalidOd("at least one origin is required")
        if self.dest in origins:
            raise InvalidOd(f"destination {self.dest!r} is also an origin")

    def validate(self, network: RoadNetwork) -> "OdSpec":
        for v in self.origins + (self.dest,):
            network.check_node(v)
        return self


@dataclass(frozen=True)
class Path:
    """Simple path from one origin to the destination, as edge positions."""

    origin: str
    dest: str
    edges: tuple
    n_edges: int

    @property
    def z(self) -> np.ndarray:
        z = np.zeros(self.n_edges)
        z[list(self.edges)] = 1.0
        return z

    def edge_ids(self, network: RoadNetwork) -> list[int]:
        return [int(network.edge_ids[k]) for k in self.edges]

    def node_sequence(self, network: RoadNetwork) -> list[str]:
        seq = [self.origin]
        for k in self.edges:
            seq.append(network.nodes[network.dst[k]])
        return seq

    def cost(self, costs) -> float:
        total = 0.0
        for k in self.edges:
            total += costs[k]
        return float(total)

    def __len__(self):
        return len(self.edges)


def path_from_edge_ids(network: RoadNetwork, ids: Sequence[int]) -> Path:
    try:
        ks = tuple(network.edge_pos[int(i)] for i in ids)
    except KeyError as exc:
        raise UnknownNode(f"unknown edge id {exc.args[0]}") from None
    if not ks:
        raise InvalidOd("empty path")
    for a, b in zip(ks, ks[1:]):
        if network.dst[a] != network.src[b]:
            raise InvalidOd("edge list is not a connected walk")
    nodes = [network.src[ks[0]]] + [network.dst[k] for k in ks]
    if len(set(nodes)) != len(nodes):
        raise InvalidOd("edge list revisits a node")
    return Path(network.nodes[nodes[0]], network.nodes[nodes[-1]], ks, network.n_edges)


def od_vector(network: RoadNetwork, od: OdSpec, chosen_origin: str) -> np.ndarray:
    if chosen_origin not in od.origins:
        raise UnknownNode(f"{chosen_origin!r} is not an origin of this od pair")
    b = np.zeros(network.n_nodes)
    b[network.check_node(chosen_origin)] = 1.0
    b[network.check_node(od.dest)] = -1.0
    return b


def dijkstra(network: RoadNetwork, costs, od: OdSpec, skip=()) -> tuple[Path, float]:
    """Minimum-cost simple path from the best origin to ``od.dest``.

    Labels are ordered by (cost, edge-id sequence), which makes the returned
    path the minimum of the total order used for tie-breaking. A virtual
    super-source is emulated by seeding every origin at cost zero. Edge
    positions listed in ``skip`` are treated as removed.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (network.n_edges,):
        raise ValueError("cost vector has the wrong length")
    if np.any(costs < 0) or not np.all(np.isfinite(costs)):
        raise ValueError("costs must be finite and nonnegative")
    skip = frozenset(skip)
    target = network.check_node(od.dest)
    best: dict[int, tuple] = {}
    back: dict[int, tuple] = {}
    heap = []
    for o in od.origins:
        i = network.check_node(o)
        best[i] = (0.0, ())
        back[i] = (o, ())
        heapq.heappush(heap, (0.0, (), i))
    done = set()
    c = costs.tolist()
    ids = network.edge_ids.tolist()
    dst = network.dst.tolist()
    while heap:
        d, seq, u = heapq.heappop(heap)
        if u in done or best[u] != (d, seq):
            continue
        done.add(u)
        if u == target:
            origin, ks = back[u]
            return Path(origin, od.dest, ks, network.n_edges), d
        origin, ks = back[u]
        for k in network.out_edges[u]:
            v = dst[k]
            if v in done or k in skip:
                continue
            label = (d + c[k], seq + (ids[k],))
            if v not in best or label < best[v]:
                best[v] = label
                back[v] = (origin, ks + (k,))
                heapq.heappush(heap, (label[0], label[1], v))
    raise Unreachable(f"{od.dest!r} is unreachable from {list(od.origins)}")


def shortest_distances(network: RoadNetwork, costs, origin: str) -> np.ndarray:
    """Single-source distances (inf where unreachable); no path bookkeeping."""
    costs = np.asarray(costs, dtype=float)
    dist = np.full(network.n_nodes, np.inf)
    s = network.check_node(origin)
    dist[s] = 0.0
    heap = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for k in network.out_edges[u]:
            v = network.dst[k]
            nd = d + costs[k]
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def hop_counts(network: RoadNetwork, origin: str) -> np.ndarray:
    return shortest_distances(network, np.ones(network.n_edges), origin)


def enumerate_simple_paths(network: RoadNetwork, od: OdSpec) -> list[Path]:
    """Every simple origin-to-destination path, sorted by edge-id sequence."""
    if network.n_edges > MAX_ENUM_EDGES:
        raise TooLarge(f"{network.n_edges} edges exceeds the enumeration guard of {MAX_ENUM_EDGES}")
    target = network.check_node(od.dest)
    found = {}

    def walk(u, visited, ks, origin):
        if u == target:
            found[ks] = Path(origin, od.dest, ks, network.n_edges)
            return
        for k in network.out_edges[u]:
            v = network.dst[k]
            if v not in visited:
                walk(v, visited | {v}, ks + (k,), origin)

    for o in od.origins:
        i = network.check_node(o)
        walk(i, {i}, (), o)
    return sorted(found.values(), key=lambda p: p.edge_ids(network))
