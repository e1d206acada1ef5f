import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ideal_dispatch.dca import (gamma_bounds, gamma_residual, jacobi_eigh, optimistic_gap, path_matrix, root_search,
                                runner_up, solve_subproblem, subgradient_f2)
from ideal_dispatch.errors import NotSymmetric, ZeroMatrix, ZeroRadius
from ideal_dispatch.netgraph import OdSpec, build_network, dijkstra, enumerate_simple_paths
from ideal_dispatch.nets import edge_costs
from ideal_dispatch.oracles import bisect_root, gap_oracle_2d, linear_values, sample_feasible_batch
from ideal_dispatch.scenario import burg_divergence, costs_under_metric, kappa, sample_feasible


def test_path_matrix_basics(diamond, rng):
    net, od = diamond
    Phi = rng.standard_normal((4, 2))
    np.testing.assert_array_equal(path_matrix(Phi, np.zeros(4)), np.zeros((2, 2)))
    one = np.zeros((4, 2))
    one[0] = (1.0, 0.0)
    np.testing.assert_array_equal(path_matrix(one, np.array([1.0, 0, 0, 0])), [[1, 0], [0, 0]])
    for p in enumerate_simple_paths(net, od):
        G = path_matrix(Phi, p)
        assert np.linalg.eigvalsh(G).min() >= -1e-12
        X = sample_feasible(0.5, rng, 2)
        assert np.sum(G * X) == pytest.approx(p.cost(costs_under_metric(Phi, X)), rel=1e-10)


def test_subgradient_is_valid(grid3, rng):
    net, od = grid3
    Phi = rng.standard_normal((net.n_edges, 3))
    X = sample_feasible(0.6, rng, 3)
    zeta, z = subgradient_f2(Phi, net, od, X)
    assert z == dijkstra(net, costs_under_metric(Phi, X), od)[0]

    def f2(Y):
        return -dijkstra(net, costs_under_metric(Phi, Y), od)[1]

    for _ in range(100):
        A = rng.standard_normal((3, 3))
        Y = A @ A.T + 0.05 * np.eye(3)
        assert f2(Y) >= f2(X) + np.sum(zeta * (Y - X)) - 1e-9


def test_identity_subgradient_is_nominal_path(grid3, rng):
    net, od = grid3
    Phi = rng.standard_normal((net.n_edges, 2))
    _, z = subgradient_f2(Phi, net, od, np.eye(2))
    assert z == dijkstra(net, edge_costs(Phi), od)[0]


def test_jacobi(rng):
    Q, lam = jacobi_eigh(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(lam, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(np.abs(Q), np.eye(3)[:, [1, 2, 0]])
    _, lam = jacobi_eigh(np.eye(4))
    np.testing.assert_array_equal(lam, np.ones(4))
    A = rng.standard_normal((8, 8))
    S = A + A.T
    Q, lam = jacobi_eigh(S)
    assert np.linalg.norm(Q @ np.diag(lam) @ Q.T - S) <= 1e-10 * np.linalg.norm(S)
    assert np.linalg.norm(Q.T @ Q - np.eye(8)) <= 1e-12
    with pytest.raises(NotSymmetric):
        jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_gamma_bounds_values():
    g0, gmax = gamma_bounds([1.0], 1.0)
    assert g0 == 0.0
    assert gmax == pytest.approx((-1 + math.sqrt(5)) / 2, abs=1e-12)
    assert gamma_bounds([0.5, 2.0], 0.3)[0] == 0.0
    assert gamma_bounds([-2.0, 1.0], 0.3)[0] == 2.0
    with pytest.raises(ZeroMatrix):
        gamma_bounds([0.0, 0.0], 1.0)
    with pytest.raises(ZeroRadius):
        gamma_bounds([1.0], 0.0)


lam_lists = st.lists(st.floats(-50, 50).filter(lambda x: abs(x) > 1e-3), min_size=1, max_size=6)


@settings(max_examples=100, deadline=None)
@given(lam_lists, st.floats(1e-3, 10))
def test_residual_nonpositive_at_gamma_max(lam, rho):
    _, gmax = gamma_bounds(lam, rho)
    assert gamma_residual(gmax, lam, rho) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(lam_lists, st.floats(1e-3, 10))
def test_root_search_matches_bisection(lam, rho):
    g = root_search(lam, rho)
    g0, gmax = gamma_bounds(lam, rho)
    assert g0 < g <= gmax
    assert abs(gamma_residual(g, lam, rho)) <= 1e-8
    gb = bisect_root(lambda x: gamma_residual(x, lam, rho), g0, gmax)
    assert abs(g - gb) <= 1e-8 * max(1.0, gb)


def test_root_search_scalar_case():
    g = root_search([3.0], 0.1)
    assert g == pytest.approx(4.83, abs=0.01)
    assert abs(gamma_residual(g, [3.0], 0.1)) <= 1e-8


def test_root_search_equal_eigenvalues():
    lam, d, rho = 2.0, 3, 0.4
    x = bisect_root(lambda v: d * kappa(v) - rho, 1e-12, 1.0)  # root of d kappa(x) = rho below 1
    g = root_search([lam] * d, rho)
    assert g == pytest.approx(lam * x / (1 - x), rel=1e-8)


def test_subproblem_diag_example():
    G = np.diag([1.0, -0.5])
    X = solve_subproblem(G, 0.3)
    rng = np.random.default_rng(0)
    Q, lam = sample_feasible_batch(0.3, rng, 2, 10_000)
    best = min(linear_values(G, Q, lam).min(), np.trace(G))
    assert np.sum(G * X) <= best + 1e-8
    assert burg_divergence(X) == pytest.approx(0.3, abs=1e-6)


def test_subproblem_scalar_matrix():
    X = solve_subproblem(2.0 * np.eye(3), 0.5)
    x = X[0, 0]
    np.testing.assert_allclose(X, x * np.eye(3), atol=1e-14)
    assert x < 1
    assert 3 * kappa(x) == pytest.approx(0.5, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 6), st.floats(0.01, 3))
def test_subproblem_stationarity(seed, d, rho):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((d, d))
    G = A + A.T
    X, gamma = solve_subproblem(G, rho, return_gamma=True)
    assert burg_divergence(X) == pytest.approx(rho, abs=1e-6)
    resid = G + gamma * (np.eye(d) - np.linalg.inv(X))
    assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(G)


def test_zero_radius_gap(grid3, rng):
    net, od = grid3
    Phi = rng.standard_normal((net.n_edges, 2))
    z1, _ = dijkstra(net, edge_costs(Phi), od)
    res = optimistic_gap(Phi, net, od, z1, 0.0)
    assert res.gap_estimate == 0.0 and res.iterations == 1 and res.terminated_by == "zero_radius"
    worse = max(enumerate_simple_paths(net, od), key=lambda p: p.cost(edge_costs(Phi)))
    res = optimistic_gap(Phi, net, od, worse, 0.0)
    assert res.gap_estimate == pytest.approx(worse.cost(edge_costs(Phi)) - z1.cost(edge_costs(Phi)))


def test_diamond_gap_near_oracle(diamond):
    net, od = diamond
    paths = enumerate_simple_paths(net, od)
    rng = np.random.default_rng(0)
    near = 0
    for i in range(40):
        Phi = rng.standard_normal((4, 2))
        z1, _ = dijkstra(net, edge_costs(Phi), od)
        est = optimistic_gap(Phi, net, od, z1, 0.4, seed=i).gap_estimate
        ref = gap_oracle_2d(Phi, paths, z1, 0.4)
        assert est <= ref + 1e-6
        near += est >= 0.98 * ref
    assert near >= 38


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 1.0))
def test_dca_descent_certificates(seed, rho):
    net = build_network("abcd", [(1, "a", "b", 1), (2, "b", "d", 1), (3, "a", "c", 1), (4, "c", "d", 1),
                                 (5, "b", "c", 1)])
    od = OdSpec(("a",), "d")
    rng = np.random.default_rng(seed)
    Phi = rng.standard_normal((5, 2))
    z1, _ = dijkstra(net, edge_costs(Phi), od)
    res = optimistic_gap(Phi, net, od, z1, rho, seed=seed)
    obj = np.array(res.objective)
    assert np.all(np.diff(obj) <= 1e-9)
    assert all(w >= -1e-9 for w in res.trace)
    f_star = -gap_oracle_2d(Phi, enumerate_simple_paths(net, od), z1, rho)
    assert sum(res.trace) <= obj[0] - f_star + 1e-6
    assert res.gap_estimate >= 0.0
    assert burg_divergence(res.X_final) <= rho + 1e-6


def test_runner_up(diamond):
    net, od = diamond
    c = np.array([1.0, 1.0, 2.0, 2.0])
    z1, _ = dijkstra(net, c, od)
    p, v = runner_up(net, c, od, z1)
    assert p.edge_ids(net) == [3, 4] and v == 4.0
    line = build_network("abc", [(1, "a", "b", 1), (2, "b", "c", 1)])
    od2 = OdSpec(("a",), "c")
    z, _ = dijkstra(line, np.ones(2), od2)
    assert runner_up(line, np.ones(2), od2, z) is None


def test_dca_deterministic(grid3, rng):
    net, od = grid3
    Phi = rng.standard_normal((net.n_edges, 2))
    z1, _ = dijkstra(net, edge_costs(Phi), od)
    a = optimistic_gap(Phi, net, od, z1, 0.5, seed=3)
    b = optimistic_gap(Phi, net, od, z1, 0.5, seed=3)
    assert a.gap_estimate == b.gap_estimate and a.trace == b.trace
