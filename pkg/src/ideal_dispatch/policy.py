"""Selective dual-dispatch rule: send a second unit when the optimistic gap beats a threshold."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .dca import optimistic_gap, path_matrix, runner_up
from .errors import NonpositiveSlope, TooLarge
from .netgraph import OdSpec, Path, RoadNetwork, dijkstra, enumerate_simple_paths
from .nets import RadiusModel, RepresentationModel, context_embedding, edge_costs, embed_edges, radius_predict


@dataclass(frozen=True)
class ThresholdSpec:
    """Operational cost ``C`` and a risk slope curve ``lam(t)``.

    ``constant``: ``lam(t) = lam0``. ``exp_decay``: ``lam(t) = lam0 exp(-t / tau)``,
    the slope of a saturating risk curve, so later nominal arrivals get larger
    thresholds.
    """

    C: float = 10.0
    kind: str = "constant"
    lam0: float = 0.05
    tau: float = 600.0

    def __post_init__(self):
        if self.C < 0:
            raise ValueError("operational cost must be nonnegative")
        if self.kind not in ("constant", "exp_decay"):
            raise ValueError(f"unknown risk curve {self.kind!r}")
        if self.kind == "exp_decay" and not self.tau > 0:
            raise ValueError("decay time must be positive")

    def slope(self, t: float) -> float:
        if self.kind == "constant":
            return self.lam0
        return self.lam0 * math.exp(-t / self.tau)


def threshold(spec: ThresholdSpec, t_nominal: float) -> float:
    lam = spec.slope(t_nominal)
    if not lam > 0:
        raise NonpositiveSlope(f"risk slope {lam} at t={t_nominal} is not positive")
    return spec.C / lam


@dataclass
class DispatchDecision:
    dispatch_second: bool
    primary_path: Path
    secondary_path: Path | None
    gap_estimate: float
    threshold: float
    nominal_primary_time: float
    rho: float = 0.0
    candidate_path: Path | None = field(default=None, repr=False)

    def to_json(self, network: RoadNetwork) -> dict:
        return {
            "tau": int(self.dispatch_second),
            "z1_edges": self.primary_path.edge_ids(network),
            "z2_edges": self.secondary_path.edge_ids(network) if self.secondary_path else [],
            "gap_s": self.gap_estimate,
            "thr_s": self.threshold,
            "rho": self.rho,
            "t_nominal_s": self.nominal_primary_time,
        }


def secondary_candidate(Phi, network, od: OdSpec, z1: Path, rho: float, dca_kw=None):
    """DCA gap for ``z1`` and a secondary path distinct from z1 (runner-up when the gap is zero)."""
    res = optimistic_gap(Phi, network, od, z1, rho, **(dca_kw or {}))
    z2 = res.secondary_path
    if z2.edges == z1.edges or res.gap_estimate <= 0:
        ru = runner_up(network, edge_costs(Phi), od, z1)
        z2 = ru[0] if ru is not None else None
    return res.gap_estimate, z2


def decide(
    model: RepresentationModel,
    rho_model: RadiusModel | None,
    network: RoadNetwork,
    context,
    depots,
    dest: str,
    spec: ThresholdSpec,
    z1: Path | None = None,
    rho: float | None = None,
    dca_kw=None,
) -> DispatchDecision:
    """Evaluate the dispatch rule for one call.

    ``z1`` defaults to the nominal-shortest path from the best depot. With
    more than two depots each other depot is compared pairwise against the
    primary one and the largest surplus over the threshold wins. ``rho``
    overrides the radius network.
    """
    depots = tuple(depots)
    Phi = embed_edges(model, network, context)
    c = edge_costs(Phi)
    od_all = OdSpec(depots, dest).validate(network)
    if z1 is None:
        z1, _ = dijkstra(network, c, od_all)
    if rho is None:
        rho = radius_predict(rho_model, context_embedding(model, context))
    t_nom = z1.cost(c)
    thr = threshold(spec, t_nom)
    others = [d for d in depots if d != z1.origin]
    if len(depots) <= 2 or not others:
        pairs = [od_all]
    else:
        pairs = [OdSpec((z1.origin, d), dest) for d in others]
    best_gap, best_z2 = -math.inf, None
    for od in pairs:
        gap, z2 = secondary_candidate(Phi, network, od, z1, rho, dca_kw)
        if gap > best_gap:
            best_gap, best_z2 = gap, z2
    tau = best_gap > thr
    return DispatchDecision(tau, z1, best_z2 if tau else None, float(best_gap), thr, t_nom, float(rho), best_z2)


# brute force -------------------------------------------------------------


def _boundary_spectra(rho: float, d: int, n_split: int) -> np.ndarray:
    """Eigenvalue vectors on the ball boundary: budget splits x root branches."""
    from .oracles import _kappa_roots

    if d == 1:
        splits = [np.array([1.0])]
    else:
        splits = [np.array(c, dtype=float) / (n_split - 1)
                  for c in product(range(n_split), repeat=d - 1) if sum(c) <= n_split - 1]
        splits = [np.append(c, 1.0 - c.sum()) for c in splits]
    S = np.array(splits)
    lo, hi = _kappa_roots(S * rho)
    out = []
    for br in product((0, 1), repeat=d):
        out.append(np.where(np.array(br, dtype=bool), hi, lo))
    return np.vstack(out)


def _rotations(d: int, n_angle: int):
    if d == 1:
        yield np.eye(1)
        return
    angles = np.linspace(0.0, math.pi, n_angle, endpoint=False)
    if d == 2:
        for th in angles:
            yield np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        return
    from scipy.spatial.transform import Rotation

    eul = np.array(list(product(angles, angles, angles)))
    yield from Rotation.from_euler("zyz", eul).as_matrix()


def _grid_max(As, rho: float, d: int, n_angle: int, n_split: int) -> np.ndarray:
    """``max <A, X>`` over identity plus a grid on the ball boundary, for each A."""
    best = np.einsum("pii->p", As)
    if rho == 0:
        return best
    spec = _boundary_spectra(rho, d, n_split)
    for R in _rotations(d, n_angle):
        q = np.einsum("ik,pij,jk->pk", R, As, R)
        best = np.maximum(best, (q @ spec.T).max(axis=1))
    return best


def brute_force_pthr(Phi, rho: float, z1: Path, thr: float, network: RoadNetwork, od: OdSpec,
                     n_angle=180, n_split=101):
    """Exact-to-grid solution of ``max tau (Delta(z) - thr)`` by path enumeration and metric grids.

    ``Delta(z) = max_X <G(z1) - G(z), X>`` is evaluated on the grid for every
    enumerated path. Returns ``(tau, z_star, surplus)``.
    """
    Phi = np.asarray(Phi, dtype=float)
    d = Phi.shape[1]
    if network.n_edges > 16 or d > 3:
        raise TooLarge("brute force supports |E| <= 16 and d <= 3")
    if d == 3:
        n_angle, n_split = min(n_angle, 24), min(n_split, 31)
    paths, best = path_gaps(Phi, rho, z1, network, od, n_angle, n_split)
    i = int(np.argmax(best))
    surplus = float(best[i]) - thr
    if surplus > 0:
        return True, paths[i], surplus
    return False, None, 0.0


def path_gaps(Phi, rho, z1, network, od, n_angle=180, n_split=101):
    """Grid ``Delta(z)`` for every enumerated path; in d=2 the grid maximum is polished."""
    Phi = np.asarray(Phi, dtype=float)
    paths = enumerate_simple_paths(network, od)
    G1 = path_matrix(Phi, z1)
    As = np.array([G1 - path_matrix(Phi, p) for p in paths])
    if Phi.shape[1] == 2 and rho > 0:
        from .oracles import max_linear_2d

        return paths, np.array(max_linear_2d(list(As), rho, n_theta=2 * n_angle, n_s=2 * n_split + 1))
    return paths, _grid_max(As, rho, Phi.shape[1], n_angle, n_split)
