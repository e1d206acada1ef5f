"""Candidate-set replay: realized times per strategy, regret summaries and paired tests."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.stats import norm

from .errors import AllZero, Empty
from .netgraph import OdSpec
from .nets import context_embedding, edge_costs, embed_edges, radius_predict
from .policy import secondary_candidate
from .simworld import TrafficWorld, adaptive_simulate, hybrid_simulate, oracle_query

SINGLE = ("region", "google_primary")
STRATEGIES = ("region", "google_primary", "google_dual", "google_interval", "ideal", "ideal_dual")
METRIC_COLUMNS = ("strategy", "thr", "a_bar", "mean", "p95", "p99", "cvar95", "cvar99", "cand_opt_rate")
WILCOXON_COLUMNS = ("baseline", "n", "n_nonzero", "mean_diff", "ci_lo", "ci_hi", "W", "p")


@dataclass
class ReplayRecord:
    """Everything needed to score any strategy at any threshold for one incident.

    Candidates are labelled P1/P2 (adaptive runs from the two depots) and P3
    (hybrid run along the secondary path); ``primary`` and ``region`` name
    depot candidates by label.
    """

    incident: int
    times: dict
    primary: str
    region: str
    optimistic: dict
    pessimistic: dict
    gap: float
    z2_origin: str | None
    queries: dict = field(default_factory=dict)

    @property
    def t_min(self) -> float:
        return min(self.times.values())

    def outcome(self, strategy: str, thr: float = math.inf) -> tuple[float, int]:
        """Realized time and number of units for one strategy."""
        other = next(k for k in self.optimistic if k != self.primary)
        prim = self.times[self.primary]
        if strategy == "region":
            return self.times[self.region], 1
        if strategy == "google_primary":
            return prim, 1
        if strategy == "google_dual":
            return min(prim, self.times[other]), 2
        if strategy == "google_interval":
            if self.pessimistic[self.primary] - self.optimistic[other] > thr:
                return min(prim, self.times[other]), 2
            return prim, 1
        if strategy == "ideal":
            if self.gap > thr and "P3" in self.times:
                return min(prim, self.times["P3"]), 2
            return prim, 1
        if strategy == "ideal_dual":
            return min(prim, self.times.get("P3", math.inf)), 2
        raise ValueError(f"unknown strategy {strategy!r}")


def run_replay(world: TrafficWorld, model, rho_model, incidents, q: int = 5, dca_kw=None) -> list:
    """Simulate the candidate set of every incident.

    P1/P2 follow each depot's adaptive route; P3 follows the prefix of the
    secondary path found against the oracle's primary route, then adapts.
    """
    if len(world.depots) != 2:
        raise ValueError("replay compares exactly two depots")
    net = world.network
    records = []
    for inc in sorted(incidents, key=lambda x: x.id):
        times, opt, pes, queries = {}, {}, {}, {}
        routes = {}
        dur = {}
        labels = dict(zip(world.depots, ("P1", "P2")))
        for dep, label in labels.items():
            qr = oracle_query(world, dep, inc.dest, inc.time)
            routes[label], dur[label] = qr.route, qr.duration
            opt[label], pes[label] = qr.optimistic, qr.pessimistic
            sim = adaptive_simulate(world, dep, inc.dest, inc.time)
            times[label] = sim.realized_time
            queries[label] = sim.queries
        primary = min(("P1", "P2"), key=lambda k: (dur[k], k))
        z1 = routes[primary]
        Phi = embed_edges(model, net, inc.context)
        rho = radius_predict(rho_model, context_embedding(model, inc.context))
        od = OdSpec(world.depots, inc.dest)
        gap, z2 = secondary_candidate(Phi, net, od, z1, rho, dca_kw)
        z2_origin = None
        if z2 is not None:
            sim = hybrid_simulate(world, z2, q, inc.dest, inc.time)
            times["P3"] = sim.realized_time
            queries["P3"] = sim.queries
            z2_origin = z2.origin
        records.append(ReplayRecord(inc.id, times, primary, labels[world.region[inc.dest]], opt, pes,
                                    float(gap), z2_origin, queries))
    return records


def cvar(values, alpha: float) -> float:
    """Mean of the worst ``ceil((1 - alpha) n)`` values."""
    v = np.sort(np.asarray(values, dtype=float))[::-1]
    if v.size == 0:
        raise Empty("no values")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k = max(1, math.ceil(round((1.0 - alpha) * v.size, 12)))
    return float(v[:k].mean())


def summarize(records, strategy: str, thr: float = math.inf) -> dict:
    if not records:
        raise Empty("no replay records")
    out = [r.outcome(strategy, thr) for r in records]
    t = np.array([o[0] for o in out])
    a = np.array([o[1] for o in out], dtype=float)
    tmin = np.array([r.t_min for r in records])
    reg = t - tmin
    return {
        "strategy": strategy,
        "thr": thr,
        "a_bar": float(a.mean()),
        "mean": float(reg.mean()),
        "p95": float(np.quantile(reg, 0.95)),
        "p99": float(np.quantile(reg, 0.99)),
        "cvar95": cvar(reg, 0.95),
        "cvar99": cvar(reg, 0.99),
        "cand_opt_rate": float(np.mean(t == tmin)),
    }


def regrets(records, strategy: str, thr: float = math.inf) -> np.ndarray:
    return np.array([r.outcome(strategy, thr)[0] - r.t_min for r in records])


def sweep(records, thr_grid, strategies=("ideal", "google_interval")) -> list:
    """One operating point per (threshold-dependent strategy, threshold)."""
    if len(thr_grid) == 0:
        raise Empty("empty threshold grid")
    return [summarize(records, s, float(t)) for s in strategies for t in thr_grid]


def default_rows(records, thr: float) -> list:
    rows = [summarize(records, s) for s in ("region", "google_primary", "google_dual", "ideal_dual")]
    rows += [summarize(records, s, thr) for s in ("google_interval", "ideal")]
    return rows


def _ranks(a):
    """Average ranks (1-based) with ties sharing the mean rank."""
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    sa = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sa[j + 1] == sa[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_p(ranks, W) -> float:
    """P(W' >= W) under random signs, by enumerating all sign patterns."""
    n = len(ranks)
    count = 0
    total = 0
    r2 = np.round(2.0 * ranks).astype(int)
    w2 = int(round(2.0 * W))
    for signs in product((0, 1), repeat=n):
        total += 1
        if sum(r for r, s in zip(r2, signs) if s) >= w2:
            count += 1
    return count / total


def wilcoxon_one_sided(diffs, method: str = "auto") -> tuple[float, float]:
    """Signed-rank test of the alternative that differences tend to be positive.

    Zeros are dropped and tied magnitudes share average ranks. ``method`` is
    ``exact`` (sign enumeration), ``normal`` (tie-corrected, continuity
    corrected) or ``auto`` (exact up to 12 nonzero differences).
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZero("all differences are zero")
    r = _ranks(np.abs(d))
    W = float(r[d > 0].sum())
    if method == "exact" or (method == "auto" and n <= 12):
        return W, _exact_p(r, W)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(counts**3 - counts)) / 48.0
    if var <= 0:
        return W, 0.5
    z = (W - mean - 0.5) / math.sqrt(var)
    return W, float(norm.sf(z))


def wilcoxon_rows(records, baselines=("region", "google_primary", "google_dual"), thr=math.inf) -> list:
    """Paired one-sided tests of baseline regret minus always-dual IDEAL regret.

    ``ci_lo``/``ci_hi`` are the sample mean difference plus or minus 1.96 standard errors.
    """
    ref = regrets(records, "ideal_dual")
    rows = []
    for b in baselines:
        diff = regrets(records, b, thr) - ref
        n = diff.size
        mean = float(diff.mean())
        se = float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        nz = int(np.count_nonzero(diff))
        try:
            W, p = wilcoxon_one_sided(diff)
        except AllZero:
            W, p = 0.0, 1.0
        rows.append({"baseline": b, "n": n, "n_nonzero": nz, "mean_diff": mean,
                     "ci_lo": mean - 1.96 * se, "ci_hi": mean + 1.96 * se, "W": W, "p": p})
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "inf" if v == math.inf else repr(v)
    return str(v)


def write_csv(rows, columns, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
