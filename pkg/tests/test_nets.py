import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ideal_dispatch.acceptance import _gradient_network
from ideal_dispatch.errors import DimMismatch
from ideal_dispatch.netgraph import OdSpec, build_network, default_features, dijkstra
from ideal_dispatch.nets import (LossKind, Mlp, RadiusModel, RepresentationModel, backward_through_path, edge_costs,
                                 embed_edges, flat_grads, flat_params, init_model, init_radius_model, radius_predict,
                                 regularizer, set_flat_params)
from ideal_dispatch.training import fit_radius


@pytest.fixture
def net():
    return _gradient_network()


def fd_grad(F, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (F(x + e) - F(x - e)) / (2 * h)
    return g


def test_edge_costs():
    np.testing.assert_array_equal(edge_costs(np.array([[0.0, 0.0], [3.0, 4.0]])), [0.0, 25.0])


@given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), min_size=1, max_size=10))
def test_edge_costs_nonnegative(rows):
    assert np.all(edge_costs(np.array(rows)) >= 0)


def test_zero_model_gives_zero_embeddings(net):
    m = init_model(0, d=4, hidden=8, network=net)
    for p in m.params():
        p[...] = 0.0
    assert np.all(embed_edges(m, net, np.ones(27)) == 0.0)


def test_embedding_shape_and_determinism():
    rng = np.random.default_rng(0)
    nodes = [f"v{i}" for i in range(12)]
    edges = [(k + 1, nodes[k % 12], nodes[(k * 5 + 1) % 12], 100.0) for k in range(40) if k % 12 != (k * 5 + 1) % 12]
    big = build_network(nodes, edges[:40])
    m = init_model(1, network=big)
    ctx = rng.standard_normal(27)
    Phi = embed_edges(m, big, ctx)
    assert Phi.shape == (big.n_edges, 8) and np.all(np.isfinite(Phi))
    np.testing.assert_array_equal(Phi, embed_edges(m, big, ctx))
    with pytest.raises(DimMismatch):
        embed_edges(m, big, np.zeros(26))


def test_mlp_rejects_bad_layers(rng):
    with pytest.raises(ValueError):
        Mlp([np.zeros((2, 3))], [np.zeros(2)], ["relu"])
    with pytest.raises(ValueError):
        Mlp([np.zeros((2, 3)), np.zeros((1, 4))], [np.zeros(2), np.zeros(1)], ["tanh", "identity"])


def test_model_json_round_trip(net, tmp_path):
    m = init_model(5, network=net)
    m.save(tmp_path / "m.json")
    back = RepresentationModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(flat_params(back), flat_params(m))
    assert json.dumps(back.to_json()) == json.dumps(m.to_json())


def test_regularizer_symmetry_and_empty():
    f = default_features(100.0)
    twin = build_network("abc", [(1, "a", "b", 100.0, f), (2, "b", "c", 100.0, f.copy())])
    m = init_model(0, d=4, hidden=8)
    assert regularizer(m, twin)[0] == 0.0
    lone = build_network("abcd", [(1, "a", "b", 100.0), (2, "c", "d", 80.0)])
    assert regularizer(m, lone)[0] == 0.0


def test_regularizer_gradient(net):
    m = init_model(2, d=4, hidden=8, network=net)
    th = flat_params(m)
    _, g = regularizer(m, net)

    def F(x):
        set_flat_params(m, x)
        v = regularizer(m, net)[0]
        set_flat_params(m, th)
        return v

    fd = fd_grad(F, th)
    g = flat_grads(g)
    assert np.linalg.norm(fd - g) <= 1e-5 * np.linalg.norm(g)


def test_regularizer_invariant_to_pair_order(net):
    m = init_model(2, d=4, hidden=8, network=net)
    v = regularizer(m, net)[0]
    net.__dict__["adjacent_pairs"] = net.adjacent_pairs[::-1, ::-1].copy()
    assert regularizer(m, net)[0] == pytest.approx(v, rel=1e-12)


@pytest.mark.parametrize("kind,beta", [("squared", 0.0), ("huber", 0.0), ("squared", 0.3)])
def test_path_gradient_matches_fd(net, kind, beta):
    m = init_model(3, d=4, hidden=8, network=net)
    ctx = np.random.default_rng(1).standard_normal(27)
    z, _ = dijkstra(net, edge_costs(embed_edges(m, net, ctx)), OdSpec(("a",), "f"))
    loss = LossKind(kind, delta=0.5)
    _, _, g = backward_through_path(m, net, ctx, z, 5.0, loss, beta)
    th = flat_params(m)

    def F(x):
        set_flat_params(m, x)
        v = backward_through_path(m, net, ctx, z, 5.0, loss)[0] + beta * regularizer(m, net)[0]
        set_flat_params(m, th)
        return v

    g = flat_grads(g)
    assert np.linalg.norm(fd_grad(F, th) - g) <= 1e-4 * np.linalg.norm(g)


def test_zero_residual_leaves_regularizer_only(net):
    m = init_model(3, d=4, hidden=8, network=net)
    ctx = np.zeros(27)
    z, h = dijkstra(net, edge_costs(embed_edges(m, net, ctx)), OdSpec(("a",), "f"))
    _, _, g = backward_through_path(m, net, ctx, z, h, LossKind("squared"), beta=0.2)
    _, g_reg = regularizer(m, net)
    np.testing.assert_allclose(flat_grads(g), 0.2 * flat_grads(g_reg), atol=1e-15)


@given(st.floats(-29, 29), st.floats(0, 500))
def test_huber_inside_zone_equals_squared(r, t):
    hub, sq = LossKind("huber", delta=30.0), LossKind("squared")
    assert hub.value_and_slope(t + r, t) == sq.value_and_slope(t + r, t)


def test_huber_outside_zone_slope_saturates():
    v, s = LossKind("huber", delta=3.0, time_scale=1.0).value_and_slope(10.0, 0.0)
    assert s == 3.0 and v == pytest.approx(3.0 * (10.0 - 1.5))


def test_radius_head():
    rm = init_radius_model(0)
    for p in rm.params():
        p[...] = 0.0
    assert radius_predict(rm, np.ones(8)) == pytest.approx(math.log(2), abs=1e-12)
    with pytest.raises(ValueError):
        RadiusModel(Mlp.init([8, 1], ["identity"], np.random.default_rng(0)))


@given(st.lists(st.floats(-100, 100), min_size=8, max_size=8))
def test_radius_nonnegative(theta):
    assert radius_predict(init_radius_model(4), np.array(theta)) >= 0


def test_radius_fits_constant():
    X = np.random.default_rng(0).standard_normal((100, 8))
    fitted, trace = fit_radius(init_radius_model(1), X, np.full(100, 0.5), epochs=150)
    assert np.all(np.abs(radius_predict(fitted, X) - 0.5) <= 0.05)
    assert trace[-1] < trace[0]


def test_radius_fits_zero_targets():
    X = np.random.default_rng(0).standard_normal((60, 8))
    fitted, _ = fit_radius(init_radius_model(1), X, np.zeros(60), epochs=200)
    assert np.all(radius_predict(fitted, X) < 0.05)


def test_radius_fits_generative_targets():
    rng = np.random.default_rng(3)
    w = rng.standard_normal(8) / math.sqrt(8)
    X = rng.standard_normal((400, 8))
    y = 0.2 + 0.3 / (1 + np.exp(-X @ w))
    fitted, _ = fit_radius(init_radius_model(2), X[:300], y[:300], epochs=300)
    assert np.mean(np.abs(radius_predict(fitted, X[300:]) - y[300:])) <= 0.1


def test_radius_memorizes_single_pair():
    x = np.random.default_rng(0).standard_normal((1, 8))
    fitted, _ = fit_radius(init_radius_model(1), x, [0.3], epochs=400, lr=0.02, batch_size=1)
    assert abs(radius_predict(fitted, x[0]) - 0.3) <= 0.01


def test_radius_model_json(tmp_path):
    rm = init_radius_model(3)
    rm.save(tmp_path / "r.json")
    back = RadiusModel.load(tmp_path / "r.json")
    x = np.ones(8)
    assert radius_predict(back, x) == radius_predict(rm, x)
