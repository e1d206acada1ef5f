import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ideal_dispatch.errors import (DanglingEndpoint, DuplicateId, InvalidOd, NonpositiveLength, SelfLoop,
                                   TooLarge, UnknownNode, Unreachable)
from ideal_dispatch.netgraph import (OdSpec, RoadNetwork, build_network, dijkstra, enumerate_simple_paths,
                                     hop_counts, od_vector, path_from_edge_ids, shortest_distances)
from ideal_dispatch.oracles import bellman_ford, count_simple_paths


def random_network(seed, n_nodes=7, p=0.35):
    rng = np.random.default_rng(seed)
    nodes = [f"v{i}" for i in range(n_nodes)]
    edges, k = [], 1
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i != j and rng.random() < p:
                edges.append((k, nodes[i], nodes[j], float(rng.uniform(1, 10))))
                k += 1
    return build_network(nodes, edges)


def test_build_rejects_bad_input():
    with pytest.raises(DuplicateId):
        build_network("ab", [(1, "a", "b", 1), (1, "b", "a", 1)])
    with pytest.raises(DuplicateId):
        build_network("aab", [])
    with pytest.raises(DanglingEndpoint):
        build_network("ab", [(1, "a", "z", 1)])
    with pytest.raises(SelfLoop):
        build_network("ab", [(1, "a", "a", 1)])
    with pytest.raises(NonpositiveLength):
        build_network("ab", [(1, "a", "b", 0.0)])


def test_od_validation(diamond):
    net, _ = diamond
    with pytest.raises(InvalidOd):
        OdSpec(("a",), "a")
    with pytest.raises(InvalidOd):
        OdSpec((), "a")
    with pytest.raises(UnknownNode):
        OdSpec(("zz",), "a").validate(net)


def test_incidence_and_od_vector(diamond):
    net, od = diamond
    A = net.incidence
    assert A.shape == (4, 4)
    assert np.all(A.sum(axis=0) == 0)
    for p in enumerate_simple_paths(net, od):
        np.testing.assert_array_equal(A @ p.z, od_vector(net, od, "a"))


def test_dijkstra_tie_break_prefers_smaller_edge_ids(diamond):
    net, od = diamond
    p, v = dijkstra(net, np.ones(4), od)
    assert p.edge_ids(net) == [1, 2]
    assert v == 2.0


def test_dijkstra_skip_and_unreachable(diamond):
    net, od = diamond
    p, _ = dijkstra(net, np.ones(4), od, skip=(0,))
    assert p.edge_ids(net) == [3, 4]
    with pytest.raises(Unreachable):
        dijkstra(net, np.ones(4), od, skip=(0, 2))


def test_multi_origin_picks_best_origin():
    net = build_network("abc", [(1, "a", "c", 5), (2, "b", "c", 2)])
    p, v = dijkstra(net, np.array([5.0, 2.0]), OdSpec(("a", "b"), "c"))
    assert p.origin == "b" and v == 2.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_dijkstra_matches_bellman_ford(seed):
    net = random_network(seed)
    costs = np.random.default_rng(seed + 1).uniform(0.1, 5.0, net.n_edges)
    od = OdSpec(("v0",), "v6")
    try:
        p, v = dijkstra(net, costs, od)
    except Unreachable:
        assert bellman_ford(net, costs, od) == np.inf
        return
    assert v == pytest.approx(bellman_ford(net, costs, od), rel=1e-12)
    assert p.cost(costs) == pytest.approx(v, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_enumeration_count_and_shortest(seed):
    net = random_network(seed, n_nodes=6)
    od = OdSpec(("v0",), "v5")
    paths = enumerate_simple_paths(net, od)
    assert len(paths) == count_simple_paths(net, od)
    if paths:
        costs = np.random.default_rng(seed).uniform(0.1, 5.0, net.n_edges)
        _, v = dijkstra(net, costs, od)
        assert v == pytest.approx(min(p.cost(costs) for p in paths), rel=1e-12)


def test_enumeration_guard():
    nodes = [f"v{i}" for i in range(41)]
    edges = [(i + 1, nodes[i], nodes[i + 1], 1.0) for i in range(40)]
    with pytest.raises(TooLarge):
        enumerate_simple_paths(build_network(nodes, edges), OdSpec(("v0",), "v40"))


def test_path_from_edge_ids(diamond):
    net, _ = diamond
    p = path_from_edge_ids(net, [3, 4])
    assert p.node_sequence(net) == ["a", "c", "d"]
    with pytest.raises(InvalidOd):
        path_from_edge_ids(net, [1, 4])
    with pytest.raises(UnknownNode):
        path_from_edge_ids(net, [99])


def test_distances_and_hops(grid3):
    net, _ = grid3
    d = shortest_distances(net, np.ones(net.n_edges), "n00")
    np.testing.assert_array_equal(d, hop_counts(net, "n00"))
    assert d[net.check_node("n22")] == 4


def test_json_round_trip(grid3, tmp_path):
    net, _ = grid3
    net.save(tmp_path / "n.json")
    back = RoadNetwork.load(tmp_path / "n.json")
    assert json.dumps(back.to_json()) == json.dumps(net.to_json())
