"""Burg-divergence balls of metric matrices and the cost scenarios they induce.

A metric ``X`` (symmetric positive definite, d x d) maps edge embeddings to
costs ``c[e] = phi[e]^T X phi[e]``; the identity gives the nominal costs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, NoConvergence, NotPositiveDefinite, UnboundedRadius, ZeroRadius
from .netgraph import OdSpec, Path, RoadNetwork, dijkstra, shortest_distances

SYM_TOL = 1e-12
PD_PIVOT_TOL = 1e-12


def kappa(x):
    """Scalar Burg term ``x - log x - 1`` (zero only at x = 1)."""
    x = np.asarray(x, dtype=float)
    u = x - 1.0
    return u - np.log1p(u)


def is_symmetric(X, tol=SYM_TOL) -> bool:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(X))) if X.size else 1.0)
    return bool(np.max(np.abs(X - X.T), initial=0.0) <= tol * scale)


def cholesky_pd(X, tol=PD_PIVOT_TOL):
    """Cholesky factor, or None when a pivot falls below ``tol``."""
    try:
        L = np.linalg.cholesky(X)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.diag(L) <= tol):
        return None
    return L


def is_positive_definite(X) -> bool:
    X = np.asarray(X, dtype=float)
    return is_symmetric(X) and cholesky_pd(X) is not None


def burg_divergence(X) -> float:
    """``Tr(X) - log det(X) - d`` for symmetric positive definite X."""
    X = np.asarray(X, dtype=float)
    if not is_symmetric(X):
        raise NotPositiveDefinite("matrix is not symmetric")
    L = cholesky_pd(X)
    if L is None:
        raise NotPositiveDefinite("matrix is not positive definite")
    d = X.shape[0]
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    return max(float(np.trace(X)) - logdet - d, 0.0)


def in_burg_ball(X, rho: float) -> bool:
    try:
        return burg_divergence(X) <= rho
    except NotPositiveDefinite:
        return False


def eig_interval(rho: float, tol=1e-12) -> tuple[float, float]:
    """Roots ``m <= 1 <= M`` of ``kappa(x) = rho``; every eigenvalue of a ball member lies between them."""
    if rho < 0:
        raise ValueError("radius must be nonnegative")
    if rho == 0:
        return 1.0, 1.0
    # kappa(m) = rho on (0, 1]: m > exp(-rho - 1)
    lo, hi = math.exp(-rho - 1.0), 1.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if kappa(mid) > rho:
            lo = mid
        else:
            hi = mid
    m = 0.5 * (lo + hi)
    lo, hi = 1.0, rho + 2.0 + math.log(rho + 2.0)
    while kappa(hi) < rho:
        hi *= 2.0
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if kappa(mid) > rho:
            hi = mid
        else:
            lo = mid
    return m, 0.5 * (lo + hi)


def costs_under_metric(Phi, X) -> np.ndarray:
    Phi = np.asarray(Phi, dtype=float)
    X = np.asarray(X, dtype=float)
    if Phi.ndim != 2 or X.shape != (Phi.shape[1], Phi.shape[1]):
        raise DimMismatch(f"embeddings {Phi.shape} incompatible with metric {X.shape}")
    c = np.einsum("ei,ij,ej->e", Phi, X, Phi)
    return np.maximum(c, 0.0)


def nominal_costs(Phi) -> np.ndarray:
    Phi = np.asarray(Phi, dtype=float)
    return np.einsum("ei,ei->e", Phi, Phi)


def random_orthogonal(rng, d: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def random_symmetric_direction(rng, d: int) -> np.ndarray:
    A = rng.standard_normal((d, d))
    U = 0.5 * (A + A.T)
    return U / np.linalg.norm(U)


def _bisect_increasing(fn, target, hi, iters=200):
    lo = 0.0
    while fn(hi) < target:
        lo, hi = hi, hi * 2.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if fn(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


def sample_feasible(rho: float, rng, d: int, divergence=None) -> np.ndarray:
    """Random ball member ``X != I`` with ``D_Burg(X, I) <= rho``.

    Eigenvectors are Haar-distributed; log-eigenvalues follow a random unit
    direction scaled so the divergence hits ``divergence`` (default: uniform
    in ``(0, rho]``).
    """
    if rho <= 0:
        raise ZeroRadius("cannot sample a non-identity member of a zero-radius ball")
    if divergence is None:
        divergence = rho * (1.0 - rng.random())
    divergence = min(float(divergence), rho)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)

    def div(t):
        return float(np.sum(np.expm1(t * v) - t * v))

    t = _bisect_increasing(div, divergence, hi=1.0)
    Q = random_orthogonal(rng, d)
    X = (Q * np.exp(t * v)) @ Q.T
    return 0.5 * (X + X.T)


def restart_matrix(rho: float, rng, d: int, frac: float = 0.5) -> np.ndarray:
    """``I + tU`` with U a random unit-Frobenius symmetric direction and ``D_Burg = frac * rho``."""
    if rho <= 0:
        raise ZeroRadius("restart needs a positive radius")
    U = random_symmetric_direction(rng, d)
    mu = np.linalg.eigvalsh(U)
    limit = 1.0 / -mu.min() if mu.min() < 0 else math.inf

    def div(t):
        return float(np.sum(t * mu - np.log1p(t * mu)))

    target = frac * rho
    hi = 0.5 * limit if math.isfinite(limit) else 1.0
    if math.isfinite(limit):
        lo, h = 0.0, limit
        for _ in range(200):
            mid = 0.5 * (lo + h)
            if div(mid) < target:
                lo = mid
            else:
                h = mid
        t = lo
    else:
        t = _bisect_increasing(div, target, hi)
    X = np.eye(d) + t * U
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class ScenarioSet:
    """Costs reachable from embeddings ``Phi`` by metrics within Burg radius ``rho``."""

    Phi: np.ndarray = field(repr=False)
    rho: float

    def __post_init__(self):
        if not self.rho >= 0:
            raise ValueError("scenario radius must be nonnegative")

    @property
    def nominal(self) -> np.ndarray:
        return nominal_costs(self.Phi)

    def contains_metric(self, X) -> bool:
        return in_burg_ball(X, self.rho)

    def costs(self, X) -> np.ndarray:
        return costs_under_metric(self.Phi, X)


# target radius ------------------------------------------------------------


@dataclass
class RadiusResult:
    rho: float
    X: np.ndarray
    h_hat: float
    t: float
    cuts: list = field(default_factory=list)
    mu: np.ndarray | None = None
    h_final: float = 0.0


def _gram(Phi, path: Path) -> np.ndarray:
    P = Phi[list(path.edges)]
    return P.T @ P


def _dual_value(Gs, mu, t, d):
    M = np.tensordot(mu, Gs, axes=1)
    L = cholesky_pd(np.eye(d) - M, tol=0.0)
    if L is None:
        return -math.inf, None
    return 2.0 * float(np.sum(np.log(np.diag(L)))) + t * float(mu.sum()), L


def solve_radius_dual(Gs, t, mu0=None, tol=1e-9, max_steps=500):
    """Maximize ``log det(I - sum mu_j G_j) + t sum mu_j`` over ``mu >= 0``.

    Projected Newton steps with backtracking that keeps ``I - sum mu_j G_j``
    positive definite; the primal metric is ``X(mu) = (I - sum mu_j G_j)^{-1}``.
    """
    Gs = np.asarray(Gs, dtype=float)
    m, d, _ = Gs.shape
    mu = np.zeros(m) if mu0 is None else np.maximum(np.asarray(mu0, dtype=float), 0.0)
    q, L = _dual_value(Gs, mu, t, d)
    if L is None:
        mu = np.zeros(m)
        q, L = _dual_value(Gs, mu, t, d)
    for _ in range(max_steps):
        Linv = np.linalg.inv(L)
        X = Linv.T @ Linv
        XG = np.einsum("ij,mjk->mik", X, Gs)
        g = t - np.einsum("mii->m", XG)
        pg = np.where(mu > 0, g, np.maximum(g, 0.0))
        if np.max(np.abs(pg)) <= tol * max(1.0, abs(t)):
            break
        H = -np.einsum("aij,bji->ab", XG, XG)
        free = (mu > 0) | (g > 0)
        step = np.zeros(m)
        idx = np.flatnonzero(free)
        try:
            step[idx] = np.linalg.solve(-H[np.ix_(idx, idx)], g[idx])
        except np.linalg.LinAlgError:
            step[idx] = g[idx]
        if g @ step <= 0:
            step = pg.copy()
        improved = False
        for direction in (step, pg):
            s = 1.0
            for _ in range(80):
                cand = np.maximum(mu + s * direction, 0.0)
                qc, Lc = _dual_value(Gs, cand, t, d)
                if Lc is not None and qc >= q + 1e-4 * float(g @ (cand - mu)) and qc > q - 1e-15 * abs(q):
                    improved = not np.array_equal(cand, mu)
                    break
                s *= 0.5
            if improved:
                mu, q, L = cand, qc, Lc
                break
        if not improved:
            break
    Linv = np.linalg.inv(L)
    X = Linv.T @ Linv
    return mu, 0.5 * (X + X.T)


def target_radius_from_embeddings(
    Phi, network: RoadNetwork, od: OdSpec, t: float, feas_tol=1e-6, max_cuts=200
) -> RadiusResult:
    """Smallest Burg divergence lifting the shortest-path value to at least ``t``.

    Cutting planes over paths: each round solves the dual of
    ``min D_Burg(X, I) s.t. <G(z_j), X> >= t`` in closed form for X and asks
    the shortest-path oracle under X for a violated path.
    """
    Phi = np.asarray(Phi, dtype=float)
    d = Phi.shape[1]
    z0, h_hat = dijkstra(network, nominal_costs(Phi), od)
    if h_hat >= t:
        return RadiusResult(0.0, np.eye(d), h_hat, t, [z0], np.zeros(1), h_hat)
    if h_hat <= 0.0:
        raise UnboundedRadius("a zero-cost path exists under every metric; no radius reaches t")
    cuts = [z0]
    Gs = [_gram(Phi, z0)]
    mu = np.zeros(1)
    for _ in range(max_cuts):
        mu, X = solve_radius_dual(np.array(Gs), t, mu0=mu)
        z, h = dijkstra(network, costs_under_metric(Phi, X), od)
        if h >= t - feas_tol:
            return RadiusResult(burg_divergence(X), X, h_hat, t, cuts, mu, h)
        if any(z.edges == c.edges for c in cuts):
            raise NoConvergence(f"cutting planes stalled: path repeated with value {h} < {t}")
        cuts.append(z)
        Gs.append(_gram(Phi, z))
        mu = np.append(mu, 0.0)
    raise NoConvergence(f"no feasible metric after {max_cuts} cuts")


def target_radius(model, network: RoadNetwork, sample, **kw) -> float:
    from .nets import embed_edges

    Phi = embed_edges(model, network, sample.context)
    od = OdSpec((sample.origin,), sample.dest)
    return target_radius_from_embeddings(Phi, network, od, sample.t, **kw).rho


def dual_certificate(network: RoadNetwork, costs, origin: str, dest: str):
    """LP-dual pair ``(pi, omega)`` from shortest-path potentials under ``costs``.

    Satisfies ``A^T pi - omega <= costs`` with ``omega = 0``; the certified
    value ``b^T pi - 1^T omega`` equals the shortest origin-dest value.
    """
    dist = shortest_distances(network, costs, origin)
    finite = np.isfinite(dist)
    big = float(dist[finite].max()) if finite.any() else 0.0
    dist = np.where(finite, dist, big)
    pi = -dist
    omega = np.zeros(network.n_edges)
    return pi, omega
