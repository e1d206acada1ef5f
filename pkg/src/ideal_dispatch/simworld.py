"""Seeded synthetic road world: network, calendar, weather and a drifting traffic oracle.

Hidden edge embeddings ``w_e`` (unit vectors) are scaled so that the squared
norm equals the free-flow time times a context-dependent congestion factor.
Realized edge times apply a metric ``X(t)`` from a Burg ball around the
identity; fresh metrics are drawn every ``epoch_s`` seconds and interpolated
linearly in between, which keeps every intermediate metric inside the ball.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

from .errors import CycleGuard, PrefixBroken
from .netgraph import (
    EDGE_FEATURE_DIM,
    ROAD_CLASSES,
    Edge,
    OdSpec,
    Path,
    RoadNetwork,
    dijkstra,
    hop_counts,
    path_from_edge_ids,
)
from .nets import CONTEXT_DIM
from .scenario import sample_feasible
from .seeding import rng_for
from .training import Sample

MONTH_DAYS = (31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
DAY_S = 86400.0
# context layout: weather(5), hour(1), weekday one-hot(7), month one-hot(12), holiday, holiday eve
CTX_WEATHER = slice(0, 5)
CTX_HOUR = 5
CTX_WEEKDAY = slice(6, 13)
CTX_MONTH = slice(13, 25)
CTX_HOLIDAY = 25
CTX_EVE = 26


@dataclass(frozen=True)
class WorldConfig:
    rows: int = 6
    cols: int = 6
    spacing_m: float = 250.0
    arterial_every: int = 3
    depots: tuple = ()
    d_true: int = 4
    rho_true: float = 0.8
    epoch_s: float = 120.0
    drift: bool = True
    noise_sigma: float = 0.0
    kappa_opt: float = 0.8
    kappa_pess: float = 1.4
    congestion: float = 0.6
    rain_effect: float = 0.15
    n_holidays: int = 12

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("grid needs at least 2 x 2 nodes")
        if not 0 < self.kappa_opt < 1 < self.kappa_pess:
            raise ValueError("need kappa_opt < 1 < kappa_pess")
        if self.rho_true < 0 or self.noise_sigma < 0 or self.epoch_s <= 0:
            raise ValueError("invalid world parameters")

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["depots"] = list(self.depots)
        return doc

    @classmethod
    def from_json(cls, doc) -> "WorldConfig":
        doc = dict(doc)
        doc["depots"] = tuple(doc.get("depots", ()))
        return cls(**doc)


def static_config(**kw) -> WorldConfig:
    """A time-invariant world: no drift, no congestion, no noise."""
    base = dict(drift=False, congestion=0.0, rain_effect=0.0, noise_sigma=0.0)
    base.update(kw)
    return WorldConfig(**base)


def node_name(r: int, c: int) -> str:
    return f"r{r}c{c}"


def generate_network(seed: int, cfg: WorldConfig) -> RoadNetwork:
    """Two-way grid with arterial rows/columns; features follow the 20-wide edge layout."""
    rng = rng_for(seed, "network")
    nodes = [node_name(r, c) for r in range(cfg.rows) for c in range(cfg.cols)]
    coords = {node_name(r, c): (c * cfg.spacing_m, r * cfg.spacing_m) for r in range(cfg.rows) for c in range(cfg.cols)}
    links = []
    for r in range(cfg.rows):
        for c in range(cfg.cols):
            if c + 1 < cfg.cols:
                links.append(((r, c), (r, c + 1), r % cfg.arterial_every == 0))
            if r + 1 < cfg.rows:
                links.append(((r, c), (r + 1, c), c % cfg.arterial_every == 0))
    neighbors = {v: set() for v in nodes}
    raw = []
    for a, b, arterial in links:
        length = cfg.spacing_m * rng.uniform(0.8, 1.25)
        u, v = node_name(*a), node_name(*b)
        neighbors[u].add(v)
        neighbors[v].add(u)
        raw.append((u, v, length, arterial))
        raw.append((v, u, length, arterial))
    edges = []
    for k, (u, v, length, arterial) in enumerate(raw, start=1):
        f = np.zeros(EDGE_FEATURE_DIM)
        f[0] = length
        f[1] = 60.0 if arterial else 40.0
        f[2] = len(neighbors[u])
        f[3] = len(neighbors[v])
        f[4] = 0.0
        f[5] = 2.0 if arterial else 1.0
        f[6 + ROAD_CLASSES.index("primary" if arterial else "residential")] = 1.0
        edges.append(Edge(k, u, v, float(length), f))
    return RoadNetwork(nodes, edges, coords)


@dataclass
class TrafficWorld:
    seed: int
    cfg: WorldConfig
    network: RoadNetwork
    depots: tuple
    free_flow: np.ndarray = field(repr=False)
    directions: np.ndarray = field(repr=False)
    sensitivity: np.ndarray = field(repr=False)
    holidays: frozenset = field(repr=False)

    # calendar and context ------------------------------------------------

    @staticmethod
    def calendar(abs_time: float) -> tuple[int, int, int, int]:
        """(day index, hour, weekday 0=Mon, month 0=Jan) on a 365-day synthetic year."""
        day = int(abs_time // DAY_S)
        hour = int((abs_time - day * DAY_S) // 3600.0)
        doy = day % 365
        month = int(np.searchsorted(np.cumsum(MONTH_DAYS), doy, side="right"))
        return day, hour, day % 7, month

    def weather(self, day: int, hour: int) -> np.ndarray:
        """Temperature, rainfall, humidity, wind, pressure for one hour."""
        rng = rng_for(self.seed, "weather", day, hour)
        season = math.sin(2.0 * math.pi * ((day % 365) - 100) / 365.0)
        temp = 22.0 + 6.0 * season + 3.0 * math.sin(2.0 * math.pi * (hour - 9) / 24.0) + rng.normal()
        rain = rng.exponential(4.0) if rng.random() < 0.15 else 0.0
        humidity = min(100.0, max(30.0, 75.0 + rng.normal(0.0, 8.0) + 2.0 * rain))
        wind = abs(rng.normal(12.0, 5.0))
        pressure = 1012.0 - 4.0 * season + rng.normal(0.0, 3.0)
        return np.array([temp, rain, humidity, wind, pressure])

    def context_at(self, abs_time: float) -> np.ndarray:
        day, hour, wd, month = self.calendar(abs_time)
        T = np.zeros(CONTEXT_DIM)
        T[CTX_WEATHER] = self.weather(day, hour)
        T[CTX_HOUR] = hour
        T[CTX_WEEKDAY.start + wd] = 1.0
        T[CTX_MONTH.start + month] = 1.0
        T[CTX_HOLIDAY] = float(day % 365 in self.holidays)
        T[CTX_EVE] = float((day + 1) % 365 in self.holidays)
        return T

    def congestion_level(self, T) -> float:
        hour = T[CTX_HOUR]
        peak = math.exp(-0.5 * (hour - 8.5) ** 2) + math.exp(-0.5 * (hour - 18.0) ** 2)
        weekend = T[CTX_WEEKDAY][5:].sum() > 0
        day_factor = 0.4 if T[CTX_HOLIDAY] else (0.5 if weekend else 1.0)
        rain = T[CTX_WEATHER][1]
        return self.cfg.congestion * peak * day_factor + self.cfg.rain_effect * min(rain / 10.0, 1.0)

    # ground truth ----------------------------------------------------------

    def true_embeddings(self, T) -> np.ndarray:
        """Hidden embeddings whose squared norms are the context's nominal edge times."""
        scale = self.free_flow * (1.0 + self.sensitivity * self.congestion_level(T))
        return np.sqrt(scale)[:, None] * self.directions

    def _epoch_metric(self, k: int) -> np.ndarray:
        if self.cfg.rho_true == 0:
            return np.eye(self.cfg.d_true)
        return sample_feasible(self.cfg.rho_true, rng_for(self.seed, "metric", k), self.cfg.d_true)

    def metric_at(self, abs_time: float) -> np.ndarray:
        if not self.cfg.drift:
            return self._epoch_metric(-1)
        u = abs_time / self.cfg.epoch_s
        k = math.floor(u)
        w = u - k
        return (1.0 - w) * self._epoch_metric(k) + w * self._epoch_metric(k + 1)

    def edge_times(self, abs_time: float) -> np.ndarray:
        """Predicted per-edge seconds at ``abs_time`` (no segment noise)."""
        P = self.true_embeddings(self.context_at(abs_time))
        X = self.metric_at(abs_time)
        return np.maximum(np.einsum("ij,jk,ik->i", P, X, P), 0.0)

    def segment_time(self, k: int, abs_time: float, times=None) -> float:
        times = self.edge_times(abs_time) if times is None else times
        dt = float(times[k])
        if self.cfg.noise_sigma > 0:
            epoch = math.floor(abs_time / self.cfg.epoch_s)
            eps = rng_for(self.seed, "noise", int(self.network.edge_ids[k]), epoch).standard_normal()
            dt *= math.exp(self.cfg.noise_sigma * eps - 0.5 * self.cfg.noise_sigma**2)
        return dt

    @cached_property
    def region(self) -> dict:
        """Static nearest-depot assignment by hop count; ties go to the earlier depot."""
        hops = [hop_counts(self.network, d) for d in self.depots]
        out = {}
        for i, v in enumerate(self.network.nodes):
            out[v] = self.depots[int(np.argmin([h[i] for h in hops]))]
        return out

    def to_json(self) -> dict:
        return {"seed": int(self.seed), "config": self.cfg.to_json()}

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "TrafficWorld":
        with open(path) as fh:
            doc = json.load(fh)
        return generate_world(doc["seed"], WorldConfig.from_json(doc["config"]))


def generate_world(seed: int, cfg: WorldConfig | None = None, network: RoadNetwork | None = None) -> TrafficWorld:
    cfg = cfg or WorldConfig()
    network = network or generate_network(seed, cfg)
    rng = rng_for(seed, "truth")
    speed = network.features[:, 1] / 3.6
    free_flow = network.lengths / speed
    W = rng.standard_normal((network.n_edges, cfg.d_true))
    W /= np.linalg.norm(W, axis=1, keepdims=True)
    arterial = network.features[:, 6 + ROAD_CLASSES.index("primary")] > 0
    sens = np.where(arterial, 1.0, 0.5) * rng.uniform(0.7, 1.3, network.n_edges)
    holidays = frozenset(int(x) for x in rng_for(seed, "holidays").choice(365, cfg.n_holidays, replace=False))
    if cfg.depots:
        depots = tuple(cfg.depots)
        for d in depots:
            network.check_node(d)
    else:
        depots = (node_name(1, 1), node_name(cfg.rows - 2, cfg.cols - 2))
        if depots[0] == depots[1]:
            depots = (node_name(0, 0), node_name(cfg.rows - 1, cfg.cols - 1))
    return TrafficWorld(seed, cfg, network, depots, free_flow, W, sens, holidays)


# oracle and simulators -----------------------------------------------------


@dataclass(frozen=True)
class QueryResult:
    route: Path
    duration: float
    first_dt: float
    optimistic: float
    pessimistic: float


def oracle_query(world: TrafficWorld, origin: str, dest: str, sim_time: float) -> QueryResult:
    """Route and durations under the traffic state at ``sim_time`` (absolute seconds)."""
    times = world.edge_times(sim_time)
    route, dur = dijkstra(world.network, times, OdSpec((origin,), dest))
    first = world.segment_time(route.edges[0], sim_time, times) if route.edges else 0.0
    return QueryResult(route, dur, first, world.cfg.kappa_opt * dur, world.cfg.kappa_pess * dur)


@dataclass
class SimOutcome:
    realized_time: float
    segments: list
    queries: int

    @property
    def edge_ids(self) -> list:
        return [e for e, _ in self.segments]


def _guard(world, segments):
    if len(segments) >= 10 * world.network.n_nodes:
        raise CycleGuard(f"simulation exceeded {len(segments)} segments")


def _adaptive_from(world, node, dest, t0, T, segments, queries):
    net = world.network
    while node != dest:
        _guard(world, segments)
        q = oracle_query(world, node, dest, t0 + T)
        queries += 1
        k = q.route.edges[0]
        segments.append((int(net.edge_ids[k]), q.first_dt))
        T = T + q.first_dt
        node = net.nodes[net.dst[k]]
    return T, queries


def adaptive_simulate(world: TrafficWorld, origin: str, dest: str, t0: float) -> SimOutcome:
    """Follow the first returned segment, re-query from its head, repeat until arrival."""
    world.network.check_node(origin)
    world.network.check_node(dest)
    segments: list = []
    T, queries = _adaptive_from(world, origin, dest, t0, 0.0, segments, 0)
    return SimOutcome(T, segments, queries)


def hybrid_simulate(world: TrafficWorld, prefix, q: int, dest: str, t0: float) -> SimOutcome:
    """Follow the first ``q`` segments of a prescribed path, then switch to adaptive re-querying.

    ``prefix`` is a :class:`Path` or a list of edge ids starting at an origin.
    The prescribed segments need no re-query: one initial query plus one per
    adaptive segment.
    """
    if q < 0:
        raise ValueError("prefix length must be nonnegative")
    net = world.network
    if isinstance(prefix, Path):
        ks = list(prefix.edges)
        origin = prefix.origin
    else:
        try:
            p = path_from_edge_ids(net, list(prefix))
        except Exception as exc:
            raise PrefixBroken(str(exc)) from exc
        ks, origin = list(p.edges), p.origin
    if not ks:
        raise PrefixBroken("empty prescribed path")
    node = origin
    T = 0.0
    segments: list = []
    queries = 1
    for k in ks[: min(q, len(ks))]:
        if node == dest:
            break
        if net.nodes[net.src[k]] != node:
            raise PrefixBroken(f"edge {int(net.edge_ids[k])} does not leave {node!r}")
        dt = world.segment_time(k, t0 + T)
        segments.append((int(net.edge_ids[k]), dt))
        T = T + dt
        node = net.nodes[net.dst[k]]
    T, queries = _adaptive_from(world, node, dest, t0, T, segments, queries)
    return SimOutcome(T, segments, queries)


# datasets ------------------------------------------------------------------


@dataclass(frozen=True)
class Incident:
    id: int
    time: float
    dest: str
    context: np.ndarray = field(repr=False)


def _draw_calls(world, n, rng, horizon_days=365):
    nodes = [v for v in world.network.nodes if v not in world.depots]
    times = np.sort(rng.uniform(0.0, horizon_days * DAY_S, n))
    dests = rng.choice(len(nodes), n)
    return [(float(t), nodes[int(i)]) for t, i in zip(times, dests)]


def generate_dataset(world: TrafficWorld, n: int, seed: int) -> list:
    """Trip records from a random depot to a random node, timed by the adaptive simulator."""
    rng = rng_for(seed, "dataset")
    out = []
    for t0, dest in _draw_calls(world, n, rng):
        origin = world.depots[int(rng.integers(len(world.depots)))]
        sim = adaptive_simulate(world, origin, dest, t0)
        out.append(Sample(world.context_at(t0), origin, dest, sim.realized_time))
    return out


def generate_incidents(world: TrafficWorld, n: int, seed: int) -> list:
    rng = rng_for(seed, "incidents")
    return [Incident(i, t0, dest, world.context_at(t0)) for i, (t0, dest) in enumerate(_draw_calls(world, n, rng))]
