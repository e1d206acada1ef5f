import numpy as np
import pytest

from ideal_dispatch.acceptance import grid_network
from ideal_dispatch.errors import NonpositiveSlope, TooLarge
from ideal_dispatch.netgraph import OdSpec, dijkstra, enumerate_simple_paths
from ideal_dispatch.nets import edge_costs, embed_edges, init_model, init_radius_model
from ideal_dispatch.oracles import gap_oracle_2d
from ideal_dispatch.policy import ThresholdSpec, brute_force_pthr, decide, threshold
from ideal_dispatch.scenario import eig_interval


def test_threshold_values():
    assert threshold(ThresholdSpec(C=10, lam0=0.05), 100.0) == pytest.approx(200.0)
    assert threshold(ThresholdSpec(C=0), 100.0) == 0.0
    spec = ThresholdSpec(C=10, kind="exp_decay", lam0=0.05, tau=600)
    ts = [threshold(spec, t) for t in (0, 100, 500, 1000)]
    assert all(a < b for a, b in zip(ts, ts[1:]))
    with pytest.raises(NonpositiveSlope):
        threshold(ThresholdSpec(lam0=0.0), 1.0)
    with pytest.raises(ValueError):
        ThresholdSpec(C=-1)


@pytest.fixture
def setup():
    net = grid_network()
    model = init_model(2, d=2, hidden=8, network=net)
    ctx = np.random.default_rng(0).standard_normal(27)
    return net, model, ctx


def test_zero_radius_single_dispatch(setup):
    net, model, ctx = setup
    dec = decide(model, None, net, ctx, ["n00", "n01"], "n22", ThresholdSpec(C=0.0), rho=0.0)
    assert dec.gap_estimate == 0.0 and not dec.dispatch_second and dec.secondary_path is None


def test_rule_is_strict_comparison(setup):
    net, model, ctx = setup
    dec = decide(model, None, net, ctx, ["n00", "n01"], "n22", ThresholdSpec(C=0.0), rho=0.8)
    assert dec.dispatch_second == (dec.gap_estimate > dec.threshold)
    if dec.gap_estimate > 0:
        assert dec.dispatch_second and dec.secondary_path is not None
        assert dec.secondary_path.edges != dec.primary_path.edges


def test_raising_threshold_never_adds_dual(setup):
    net, model, ctx = setup
    prev = True
    for C in (0.0, 1e-3, 0.1, 1.0, 10.0, 1e3):
        dec = decide(model, None, net, ctx, ["n00", "n01"], "n22", ThresholdSpec(C=C), rho=0.8)
        assert prev or not dec.dispatch_second
        prev = dec.dispatch_second


def test_pairwise_mode_matches_direct_for_two_depots(setup):
    net, model, ctx = setup
    a = decide(model, None, net, ctx, ["n00", "n01"], "n22", ThresholdSpec(C=0.01), rho=0.5)
    b = decide(model, None, net, ctx, ["n01", "n00"], "n22", ThresholdSpec(C=0.01), rho=0.5)
    assert a.gap_estimate == b.gap_estimate and a.dispatch_second == b.dispatch_second


def test_three_depots(setup):
    net, model, ctx = setup
    dec = decide(model, init_radius_model(0, d=2), net, ctx, ["n00", "n01", "n10"], "n22", ThresholdSpec(C=0.0))
    assert dec.rho >= 0 and dec.primary_path.origin in ("n00", "n01", "n10")
    doc = dec.to_json(net)
    assert set(doc) == {"tau", "z1_edges", "z2_edges", "gap_s", "thr_s", "rho", "t_nominal_s"}


def test_brute_force_huge_threshold(setup):
    net, model, ctx = setup
    Phi = embed_edges(model, net, ctx)
    od = OdSpec(("n00",), "n22")
    z1, _ = dijkstra(net, edge_costs(Phi), od)
    assert brute_force_pthr(Phi, 0.5, z1, 1e9, net, od) == (False, None, 0.0)


def test_brute_force_dominated_primary(diamond):
    net, od = diamond
    # route a-b-d is long in every direction, route a-c-d short in every direction
    Phi = np.array([[3.0, 0.0], [0.0, 3.0], [0.1, 0.0], [0.0, 0.1]])
    paths = enumerate_simple_paths(net, od)
    z1 = paths[0]
    m, _ = eig_interval(0.3)
    floor = m * (9.0 + 9.0) - (0.01 + 0.01) / m  # gap lower bound over the whole ball
    tau, z, surplus = brute_force_pthr(Phi, 0.3, z1, 0.5 * floor, net, od)
    assert tau and z.edges == paths[1].edges
    assert surplus == pytest.approx(gap_oracle_2d(Phi, paths, z1, 0.3) - 0.5 * floor, abs=1e-3)


def test_brute_force_guard():
    Phi = np.zeros((20, 2))
    from ideal_dispatch.netgraph import build_network

    nodes = [f"v{i}" for i in range(21)]
    net = build_network(nodes, [(i + 1, nodes[i], nodes[i + 1], 1.0) for i in range(20)])
    od = OdSpec(("v0",), "v20")
    z1, _ = dijkstra(net, np.ones(20), od)
    with pytest.raises(TooLarge):
        brute_force_pthr(Phi, 0.1, z1, 0.0, net, od)
