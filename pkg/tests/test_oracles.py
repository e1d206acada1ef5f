import math
from itertools import product

import numpy as np
import pytest

from ideal_dispatch.netgraph import OdSpec
from ideal_dispatch.oracles import (bellman_ford, bisect_root, linear_values, max_linear_2d, sample_feasible_batch,
                                    signed_rank_upper_p)
from ideal_dispatch.scenario import burg_divergence


def test_bisect_root():
    r = bisect_root(lambda x: 2.0 - x * x, 0.0, 2.0)
    assert r == pytest.approx(math.sqrt(2), abs=1e-15)


def test_bellman_ford_line():
    from ideal_dispatch.netgraph import build_network

    net = build_network("abc", [(1, "a", "b", 1), (2, "b", "c", 1)])
    assert bellman_ford(net, np.array([1.0, 2.0]), OdSpec(("a",), "c")) == 3.0


def test_batch_samples_feasible(rng):
    Q, lam = sample_feasible_batch(0.8, rng, 3, 500)
    for q, l in zip(Q[:50], lam[:50]):
        X = (q * l) @ q.T
        assert burg_divergence(X) <= 0.8 + 1e-9
    G = np.diag([1.0, 2.0, 3.0])
    vals = linear_values(G, Q, lam)
    direct = [np.sum(G * ((q * l) @ q.T)) for q, l in zip(Q, lam)]
    np.testing.assert_allclose(vals, direct, rtol=1e-12)


def test_max_linear_2d_diagonal():
    # max of <diag(1,0), X> is the largest admissible eigenvalue M with kappa(M) = rho
    from ideal_dispatch.scenario import eig_interval

    _, M = eig_interval(0.5)
    assert max_linear_2d([np.diag([1.0, 0.0])], 0.5)[0] == pytest.approx(M, abs=1e-6)


def test_signed_rank_dp_against_enumeration():
    ranks = [1.0, 2.5, 2.5, 4.0, 5.0]
    for W in (0.0, 4.0, 7.5, 15.0):
        count = sum(sum(r for r, s in zip(ranks, signs) if s) >= W for signs in product((0, 1), repeat=5))
        assert signed_rank_upper_p(ranks, W) == count / 32
