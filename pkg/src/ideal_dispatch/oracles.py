"""Brute-force reference computations used to check the fast paths.

Nothing here shares code with the algorithms it checks: shortest paths come
from Bellman-Ford, gap maxima from dense grids over the boundary of the Burg
ball (polished by Nelder-Mead), roots from plain bisection.
"""
from __future__ import annotations

import math
from itertools import product

import numpy as np
from scipy.optimize import brentq, minimize

from .netgraph import OdSpec, RoadNetwork
from .scenario import kappa


def bellman_ford(network: RoadNetwork, costs, od: OdSpec) -> float:
    dist = np.full(network.n_nodes, np.inf)
    for o in od.origins:
        dist[network.node_index[o]] = 0.0
    for _ in range(network.n_nodes):
        changed = False
        for k in range(network.n_edges):
            u, v = network.src[k], network.dst[k]
            if dist[u] + costs[k] < dist[v]:
                dist[v] = dist[u] + costs[k]
                changed = True
        if not changed:
            break
    return float(dist[network.node_index[od.dest]])


def count_simple_paths(network: RoadNetwork, od: OdSpec) -> int:
    """Iterative DFS count with an explicit stack."""
    adj = {v: [] for v in range(network.n_nodes)}
    for k in range(network.n_edges):
        adj[int(network.src[k])].append(int(network.dst[k]))
    target = network.node_index[od.dest]
    total = 0
    for o in od.origins:
        s = network.node_index[o]
        stack = [(s, frozenset([s]))]
        while stack:
            u, seen = stack.pop()
            if u == target:
                total += 1
                continue
            for v in adj[u]:
                if v not in seen:
                    stack.append((v, seen | {v}))
    return total


def bisect_root(fn, lo, hi, iters=400):
    """Root of a decreasing function on ``(lo, hi]`` by bisection to machine precision."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if fn(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _kappa_roots(values):
    """Vectorized low (<=1) and high (>=1) solutions of ``kappa(x) = values``."""
    v = np.asarray(values, dtype=float)
    lo = np.exp(-v - 1.0)
    hi = np.ones_like(v)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        big = kappa(mid) > v
        lo = np.where(big, mid, lo)
        hi = np.where(big, hi, mid)
    low = 0.5 * (lo + hi)
    lo = np.ones_like(v)
    hi = v + 2.0 + np.log(v + 2.0) + 1.0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        big = kappa(mid) > v
        hi = np.where(big, mid, hi)
        lo = np.where(big, lo, mid)
    return low, 0.5 * (lo + hi)


def _kappa_root(v, high):
    if v <= 0:
        return 1.0
    if high:
        hi = v + 2.0 + math.log(v + 2.0) + 1.0
        return brentq(lambda x: float(kappa(x)) - v, 1.0, hi, xtol=1e-15, rtol=1e-15)
    return brentq(lambda x: float(kappa(x)) - v, math.exp(-v - 1.0), 1.0, xtol=1e-300, rtol=1e-15)


def boundary_metric_2d(theta, s, branch, rho):
    """Point on the d=2 ball boundary: eigenvector angle, budget split s, root branches."""
    x1 = _kappa_root(s * rho, branch[0] == 1)
    x2 = _kappa_root((1.0 - s) * rho, branch[1] == 1)
    c, sn = math.cos(theta), math.sin(theta)
    R = np.array([[c, -sn], [sn, c]])
    return (R * np.array([x1, x2])) @ R.T


def _grid_2d(rho, n_theta, n_s):
    theta = np.linspace(0.0, math.pi, n_theta, endpoint=False)
    s = np.linspace(0.0, 1.0, n_s)
    lo1, hi1 = _kappa_roots(s * rho)
    lo2, hi2 = _kappa_roots((1.0 - s) * rho)
    return theta, s, (lo1, hi1), (lo2, hi2)


def max_linear_2d(A_list, rho, n_theta=720, n_s=401, polish=True):
    """``max_X <A, X>`` over the d=2 Burg ball, for each A in ``A_list``.

    Linear objectives peak on the boundary, which is swept by a dense
    (angle x budget-split x root-branch) grid before a Nelder-Mead polish.
    """
    out = []
    theta, s, r1, r2 = _grid_2d(rho, n_theta, n_s)
    ct, st = np.cos(theta), np.sin(theta)
    for A in A_list:
        A = np.asarray(A, dtype=float)
        # u1 = (c, s), u2 = (-s, c)
        q1 = A[0, 0] * ct**2 + 2 * A[0, 1] * ct * st + A[1, 1] * st**2
        q2 = A[0, 0] * st**2 - 2 * A[0, 1] * ct * st + A[1, 1] * ct**2
        best, arg = -math.inf, None
        for b1, b2 in product((0, 1), repeat=2):
            vals = q1[:, None] * r1[b1][None, :] + q2[:, None] * r2[b2][None, :]
            i, j = np.unravel_index(np.argmax(vals), vals.shape)
            if vals[i, j] > best:
                best, arg = float(vals[i, j]), (theta[i], s[j], (b1, b2))
        if polish and rho > 0:
            th0, s0, br = arg

            def neg(p):
                sv = min(max(p[1], 0.0), 1.0)
                return -float(np.sum(A * boundary_metric_2d(p[0], sv, br, rho)))

            res = minimize(neg, [th0, s0], method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
            best = max(best, -float(res.fun))
        out.append(best)
    return out


def gap_oracle_2d(Phi, paths, z1, rho, **kw) -> float:
    """Exact-to-grid optimistic gap: ``max_z max_X <G(z1) - G(z), X>`` over enumerated paths."""
    Phi = np.asarray(Phi, dtype=float)

    def gram(p):
        P = Phi[list(p.edges)]
        return P.T @ P

    G1 = gram(z1)
    if rho == 0:
        return max(float(np.trace(G1 - gram(p))) for p in paths)
    vals = max_linear_2d([G1 - gram(p) for p in paths], rho, **kw)
    return max(vals)


def path_gaps_2d(Phi, paths, z1, rho, **kw) -> list:
    Phi = np.asarray(Phi, dtype=float)

    def gram(p):
        P = Phi[list(p.edges)]
        return P.T @ P

    G1 = gram(z1)
    if rho == 0:
        return [float(np.trace(G1 - gram(p))) for p in paths]
    return max_linear_2d([G1 - gram(p) for p in paths], rho, **kw)


def boundary_metric_general(params, rho, d):
    """``exp(t S)`` on the ball boundary for the symmetric direction encoded by ``params``."""
    S = np.zeros((d, d))
    S[np.triu_indices(d)] = params
    S = S + S.T - np.diag(np.diag(S))
    nrm = np.linalg.norm(S)
    if nrm == 0:
        return np.eye(d)
    mu, Q = np.linalg.eigh(S / nrm)
    lo, hi = 0.0, 1.0
    while np.sum(np.expm1(hi * mu) - hi * mu) < rho:
        hi *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.sum(np.expm1(mid * mu) - mid * mu) < rho:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    return (Q * np.exp(t * mu)) @ Q.T


def max_linear_general(A, rho, rng, n_samples=4000, n_polish=4):
    """Random boundary sampling plus Nelder-Mead polish for any small d."""
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    m = d * (d + 1) // 2
    cands = rng.standard_normal((n_samples, m))
    vals = np.array([np.sum(A * boundary_metric_general(p, rho, d)) for p in cands])
    best = float(vals.max())
    for i in np.argsort(vals)[::-1][:n_polish]:
        res = minimize(lambda p: -float(np.sum(A * boundary_metric_general(p, rho, d))),
                       cands[i], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 6000})
        best = max(best, -float(res.fun))
    return best


def maxmin_paths_2d(Gs, rho, n_theta=360, n_s=201):
    """``max_X min_j <G_j, X>`` over the d=2 ball, for PSD ``G_j`` (optimum on the boundary)."""
    Gs = [np.asarray(G, dtype=float) for G in Gs]
    theta, s, r1, r2 = _grid_2d(rho, n_theta, n_s)
    ct, st = np.cos(theta), np.sin(theta)
    best, arg = -math.inf, None
    for b1, b2 in product((0, 1), repeat=2):
        mins = None
        for A in Gs:
            q1 = A[0, 0] * ct**2 + 2 * A[0, 1] * ct * st + A[1, 1] * st**2
            q2 = A[0, 0] * st**2 - 2 * A[0, 1] * ct * st + A[1, 1] * ct**2
            vals = q1[:, None] * r1[b1][None, :] + q2[:, None] * r2[b2][None, :]
            mins = vals if mins is None else np.minimum(mins, vals)
        i, j = np.unravel_index(np.argmax(mins), mins.shape)
        if mins[i, j] > best:
            best, arg = float(mins[i, j]), (theta[i], s[j], (b1, b2))
    th0, s0, br = arg

    def neg(p):
        X = boundary_metric_2d(p[0], min(max(p[1], 0.0), 1.0), br, rho)
        return -min(float(np.sum(G * X)) for G in Gs)

    res = minimize(neg, [th0, s0], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
    return max(best, -float(res.fun))


def target_radius_oracle_2d(Phi, paths, t, rho_hi=None, tol=1e-6) -> float:
    """Bisection on the radius: smallest rho whose ball contains a metric lifting every path to ``t``."""
    Phi = np.asarray(Phi, dtype=float)
    Gs = []
    for p in paths:
        P = Phi[list(p.edges)]
        Gs.append(P.T @ P)
    if min(float(np.trace(G)) for G in Gs) >= t:
        return 0.0
    lo, hi = 0.0, rho_hi or 1.0
    while maxmin_paths_2d(Gs, hi) < t:
        lo, hi = hi, 2.0 * hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if maxmin_paths_2d(Gs, mid) >= t:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def sample_feasible_batch(rho, rng, d, n):
    """``n`` ball members at once: Haar eigenvectors, log-spectrum along a random
    direction scaled by bisection to a divergence uniform in ``(0, rho]``."""
    v = rng.standard_normal((n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    target = rho * (1.0 - rng.random(n))
    lo, hi = np.zeros(n), np.ones(n)

    def div(t):
        tv = t[:, None] * v
        return np.sum(np.expm1(tv) - tv, axis=1)

    while np.any(div(hi) < target):
        hi = np.where(div(hi) < target, 2.0 * hi, hi)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = div(mid) < target
        lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
    Q, R = np.linalg.qr(rng.standard_normal((n, d, d)))
    Q = Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]
    lam = np.exp(lo[:, None] * v)
    return Q, lam


def linear_values(G, Q, lam):
    """``<G, Q diag(lam) Q^T>`` for a batch of spectral factors."""
    return np.einsum("nij,ik,nkj,nj->n", Q, G, Q, lam)


def signed_rank_upper_p(ranks, W) -> float:
    """``P(W' >= W)`` under random signs, via the counting polynomial over doubled ranks."""
    r2 = [int(round(2 * r)) for r in ranks]
    counts = {0: 1}
    for r in r2:
        nxt = dict(counts)
        for s, c in counts.items():
            nxt[s + r] = nxt.get(s + r, 0) + c
        counts = nxt
    w2 = int(round(2 * W))
    return sum(c for s, c in counts.items() if s >= w2) / 2.0 ** len(r2)
