"""Optimistic time gap by difference-of-convex iterations over a Burg ball.

With ``G(z) = sum_e z[e] phi[e] phi[e]^T`` the gap objective is
``f(X) = f1(X) - f2(X)`` where ``f1(X) = -<G(z1), X>`` and
``f2(X) = -min_z <G(z), X>``. Each iteration linearizes ``f2`` at the current
shortest path and minimizes ``<G(z_k) - G(z1), X>`` over the ball, whose
unique minimizer is ``gamma (G + gamma I)^{-1}`` for a scalar root ``gamma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, NoConvergence, NotSymmetric, Unreachable, ZeroMatrix, ZeroRadius
from .netgraph import OdSpec, Path, RoadNetwork, dijkstra
from .scenario import costs_under_metric, is_symmetric, restart_matrix
from .seeding import rng_for

MAX_JACOBI_DIM = 64


def path_matrix(Phi, z) -> np.ndarray:
    """``sum_e z[e] phi[e] phi[e]^T``; ``z`` is a :class:`Path` or a 0/1 vector."""
    Phi = np.asarray(Phi, dtype=float)
    if isinstance(z, Path):
        if z.n_edges != Phi.shape[0]:
            raise DimMismatch("path and embeddings disagree on the edge count")
        P = Phi[list(z.edges)]
        return P.T @ P
    z = np.asarray(z, dtype=float)
    if z.shape != (Phi.shape[0],):
        raise DimMismatch(f"z has shape {z.shape}, expected ({Phi.shape[0]},)")
    return (Phi * z[:, None]).T @ Phi


def subgradient_f2(Phi, network: RoadNetwork, od: OdSpec, X):
    """Element ``-G(z*)`` of the subdifferential of f2 at X, with z* the tie-broken shortest path."""
    z, _ = dijkstra(network, costs_under_metric(Phi, X), od)
    return -path_matrix(Phi, z), z


def jacobi_eigh(S, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi eigendecomposition; returns ``(Q, lam)`` with ascending ``lam``."""
    S = np.array(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1] or not is_symmetric(S, tol=1e-10):
        raise NotSymmetric("jacobi_eigh needs a symmetric square matrix")
    d = S.shape[0]
    if d > MAX_JACOBI_DIM:
        raise ValueError(f"dimension {d} exceeds {MAX_JACOBI_DIM}")
    A = 0.5 * (S + S.T)
    V = np.eye(d)
    scale = np.linalg.norm(A)
    if scale == 0.0:
        return V, np.zeros(d)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A - np.diag(np.diag(A))))
        if off <= tol * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                colp, colq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp, rowq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise NoConvergence("Jacobi sweeps exhausted")
    lam = np.diag(A).copy()
    order = np.argsort(lam, kind="stable")
    return V[:, order], lam[order]


def gamma_residual(gamma: float, lam, rho: float) -> float:
    """``sum_i kappa(gamma / (lam_i + gamma)) - rho``; strictly decreasing on ``(gamma0, inf)``."""
    lam = np.asarray(lam, dtype=float)
    u = -lam / (lam + gamma)
    return float(np.sum(u - np.log1p(u))) - rho


def _residual_slope(gamma, lam):
    lam = np.asarray(lam, dtype=float)
    return -float(np.sum(lam * lam / (gamma * (lam + gamma) ** 2)))


def gamma_bounds(lam, rho: float) -> tuple[float, float]:
    lam = np.asarray(lam, dtype=float)
    if not rho > 0:
        raise ZeroRadius("radius must be positive")
    if not np.any(lam != 0.0):
        raise ZeroMatrix("all eigenvalues are zero")
    lmin = float(lam.min())
    c = float(np.sum(lam * lam)) / rho
    root = math.sqrt(lmin * lmin + 4.0 * c)
    gmax = 0.5 * (root - lmin) if lmin <= 0 else 2.0 * c / (lmin + root)
    return max(0.0, -lmin), gmax


def root_search(lam, rho: float, eps_gamma=None, max_iter=200) -> float:
    """Root of :func:`gamma_residual` in ``(gamma0, gamma_max]``.

    Newton steps from the right end of the bracket, falling back to bisection
    whenever a step leaves the bracket.
    """
    g0, gmax = gamma_bounds(lam, rho)
    lo, hi = g0, gmax
    if eps_gamma is None:
        eps_gamma = 4.0 * np.finfo(float).eps * max(hi, 1e-300)
    f_hi = gamma_residual(hi, lam, rho)
    if f_hi == 0.0:
        return hi
    g = hi
    f = f_hi
    for _ in range(max_iter):
        slope = _residual_slope(g, lam)
        cand = g - f / slope if slope != 0.0 else math.nan
        if not (lo < cand < hi) or not math.isfinite(cand):
            cand = 0.5 * (lo + hi)
        fc = gamma_residual(cand, lam, rho)
        if fc > 0:
            lo = cand
        else:
            hi = cand
        g, f = cand, fc
        if abs(f) <= 1e-13 * max(1.0, rho) or hi - lo <= eps_gamma:
            if abs(f) > 1e-8:
                # bracket collapsed on the steep side; take the best endpoint
                f_hi = gamma_residual(hi, lam, rho)
                g = hi if abs(f_hi) < abs(f) else g
            return g
    raise NoConvergence("scalar root search did not converge")


def solve_subproblem(G, rho: float, return_gamma=False):
    """Unique minimizer of ``<G, X>`` over the Burg ball of radius ``rho``."""
    G = np.asarray(G, dtype=float)
    if not rho > 0:
        raise ZeroRadius("radius must be positive")
    if not np.any(G != 0.0):
        raise ZeroMatrix("G is the zero matrix")
    Q, lam = jacobi_eigh(G)
    gamma = root_search(lam, rho)
    x = gamma / (lam + gamma)
    X = (Q * x) @ Q.T
    X = 0.5 * (X + X.T)
    return (X, gamma) if return_gamma else X


def _frob(A, B) -> float:
    return float(np.sum(A * B))


@dataclass
class GapResult:
    gap_estimate: float
    secondary_path: Path
    X_final: np.ndarray
    trace: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    iterations: int = 0
    terminated_by: str = "tolerance"
    restarts: int = 0
    X_start: np.ndarray | None = None
    starts: int = 1


def _is_zero_direction(Gk, Gz, G1, zk: Path, z1: Path) -> bool:
    if zk.edges == z1.edges:
        return True
    scale = np.linalg.norm(Gz) + np.linalg.norm(G1)
    return bool(np.linalg.norm(Gk) <= 1e-14 * max(scale, 1e-300))


def _dca_run(Phi, network, od, z1, G1, rho, X0, eps, K, rng, restart_samples, max_stalls):
    """One DCA run from ``X0``; returns a :class:`GapResult` evaluated at its last iterate."""
    d = Phi.shape[1]
    X = X0
    trace: list[float] = []
    objective: list[float] = []
    stalls = restarts = k_run = 0
    terminated = "max_iter"
    for _ in range(K):
        c = costs_under_metric(Phi, X)
        zk, hk = dijkstra(network, c, od)
        objective.append(hk - z1.cost(c))
        Gz = path_matrix(Phi, zk)
        Gk = Gz - G1
        if rho == 0:
            X_next = np.eye(d)
        elif _is_zero_direction(Gk, Gz, G1, zk, z1):
            stalls += 1
            if stalls >= max_stalls:
                terminated = "stalled"
                break
            X_next = _restart(Phi, network, od, z1, rho, rng, d, restart_samples, X)
            restarts += 1
        else:
            stalls = 0
            X_next = solve_subproblem(Gk, rho)
        W = _frob(Gk, X - X_next)
        trace.append(W)
        X = X_next
        k_run += 1
        if rho == 0:
            terminated = "zero_radius"
            break
        if stalls == 0 and W <= eps:
            terminated = "tolerance"
            break

    c = costs_under_metric(Phi, X)
    z_last, h_last = dijkstra(network, c, od)
    if len(objective) == k_run:
        objective.append(h_last - z1.cost(c))
    return GapResult(
        gap_estimate=float(z1.cost(c) - h_last),
        secondary_path=z_last,
        X_final=X,
        trace=trace,
        objective=objective,
        iterations=k_run,
        terminated_by=terminated,
        restarts=restarts,
        X_start=X0,
    )


def _deviation_starts(Phi, network, od, z1, G1, rho, X):
    """Gap maximizers against each path that avoids one edge of z1 under metric ``X``."""
    c = costs_under_metric(Phi, X)
    out, seen = [], set()
    for k in z1.edges:
        try:
            p, _ = dijkstra(network, c, od, skip=(k,))
        except Unreachable:
            continue
        if p.edges in seen:
            continue
        seen.add(p.edges)
        Gd = path_matrix(Phi, p) - G1
        if np.any(Gd != 0.0):
            out.append(solve_subproblem(Gd, rho))
    return out


def optimistic_gap(
    Phi,
    network: RoadNetwork,
    od: OdSpec,
    z1: Path,
    rho: float,
    eps: float = 1e-6,
    K: int = 50,
    seed: int = 0,
    restart_samples: int = 4,
    max_stalls: int = 2,
    starts: int = 8,
) -> GapResult:
    """DCA estimate of ``max_X (c(X) z1 - min_z c(X) z)`` over the Burg ball.

    Starting from the identity, each round takes the shortest path ``z_k``
    under the current metric and jumps to the closed-form minimizer of
    ``<G(z_k) - G(z1), X>``. When ``z_k`` coincides with ``z1`` the linear
    model is flat and a feasible restart is drawn instead; when that happens
    ``max_stalls`` times in a row the run stops.

    With ``starts > 1`` further runs begin from the gap maximizers against the
    one-edge deviations of z1, and the run with the largest final gap is
    returned. Every run's gap is attained by a feasible metric, so the
    estimate never exceeds the true optimum.
    """
    Phi = np.asarray(Phi, dtype=float)
    if rho < 0:
        raise ValueError("radius must be nonnegative")
    if K < 1 or not eps > 0 or starts < 1:
        raise ValueError("need K >= 1, eps > 0 and starts >= 1")
    d = Phi.shape[1]
    rng = rng_for(seed, "dca-restart")
    G1 = path_matrix(Phi, z1)
    args = (Phi, network, od, z1, G1, rho)
    best = _dca_run(*args, np.eye(d), eps, K, rng, restart_samples, max_stalls)
    n_runs = 1
    if rho > 0 and starts > 1:
        seeds = _deviation_starts(*args, np.eye(d))
        seeds += _deviation_starts(*args, best.X_final)
        for X0 in seeds[: starts - 1]:
            run = _dca_run(*args, X0, eps, K, rng, restart_samples, max_stalls)
            n_runs += 1
            if run.gap_estimate > best.gap_estimate:
                best = run
    best.starts = n_runs
    return best


def runner_up(network: RoadNetwork, costs, od: OdSpec, z1: Path):
    """Cheapest path other than ``z1`` as ``(path, cost)``, or ``None`` if z1 is the only one.

    Every other path misses at least one edge of z1, so the answer is the
    best of the shortest paths with one z1 edge removed at a time.
    """
    best = None
    for k in z1.edges:
        try:
            p, v = dijkstra(network, costs, od, skip=(k,))
        except Unreachable:
            continue
        key = (v, p.edge_ids(network))
        if best is None or key < best[0]:
            best = (key, p, v)
    return None if best is None else (best[1], best[2])


def _restart(Phi, network, od, z1, rho, rng, d, samples, X_cur):
    """Feasible restart away from the zero-gap fixed point.

    Candidates are ``samples`` random matrices plus the exact maximizer of the
    gap against the current runner-up path; the one leaving z1 with the
    largest lead over its best competitor is kept.
    """
    cands = [restart_matrix(rho, rng, d, frac=0.5) for _ in range(max(1, samples))]
    G1 = path_matrix(Phi, z1)
    ru = runner_up(network, costs_under_metric(Phi, X_cur), od, z1)
    if ru is not None:
        Gd = path_matrix(Phi, ru[0]) - G1
        if np.any(Gd != 0.0):
            cands.append(solve_subproblem(Gd, rho))
    best, best_score = None, -math.inf
    for X in cands:
        c = costs_under_metric(Phi, X)
        ru = runner_up(network, c, od, z1)
        score = math.inf if ru is None else z1.cost(c) - ru[1]
        if score > best_score:
            best, best_score = X, score
    return best
