import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ideal_dispatch.errors import AllZero, Empty
from ideal_dispatch.evalkit import (METRIC_COLUMNS, STRATEGIES, WILCOXON_COLUMNS, ReplayRecord, _ranks, cvar,
                                    regrets, summarize, sweep, wilcoxon_one_sided, wilcoxon_rows, write_csv)
from ideal_dispatch.oracles import signed_rank_upper_p

GRID = (-1.0, 0.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0, math.inf)


def random_records(seed, n=30):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        times = {k: float(rng.uniform(100, 400)) for k in ("P1", "P2", "P3")}
        if rng.random() < 0.1:
            del times["P3"]
        opt = {k: float(rng.uniform(80, 300)) for k in ("P1", "P2")}
        pes = {k: v * 1.5 for k, v in opt.items()}
        out.append(ReplayRecord(i, times, str(rng.choice(["P1", "P2"])), str(rng.choice(["P1", "P2"])), opt, pes,
                                float(rng.uniform(0.1, 200)), "r0c0", {}))
    return out


def test_cvar_values():
    assert cvar([5.0, 5.0, 5.0], 0.9) == 5.0
    assert cvar([0, 0, 0, 100], 0.75) == 100.0
    with pytest.raises(Empty):
        cvar([], 0.9)
    with pytest.raises(ValueError):
        cvar([1.0], 1.0)


@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=200), st.sampled_from([0.5, 0.9, 0.95, 0.99]))
def test_cvar_dominates_quantile(values, alpha):
    assert cvar(values, alpha) >= np.quantile(values, alpha) - 1e-9 * max(1.0, max(values))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_replay_metric_invariants(seed):
    recs = random_records(seed)
    for s in STRATEGIES:
        for thr in GRID:
            assert regrets(recs, s, thr).min() >= 0
            row = summarize(recs, s, thr)
            assert 0 <= row["cand_opt_rate"] <= 1
            assert row["cvar95"] >= row["p95"] - 1e-9
    for r in recs:
        t_dual = r.outcome("ideal_dual")[0]
        assert t_dual == min(r.times[r.primary], r.times.get("P3", math.inf))
        assert r.outcome("google_dual")[0] == min(r.times["P1"], r.times["P2"])
    assert summarize(recs, "ideal_dual")["cand_opt_rate"] >= summarize(recs, "google_primary")["cand_opt_rate"]
    a = [row["a_bar"] for row in sweep(recs, GRID, ("ideal",))]
    assert all(x >= y for x, y in zip(a, a[1:]))
    assert a[-1] == 1.0


def test_sweep_endpoints():
    recs = [r for r in random_records(1) if "P3" in r.times]
    a = [row["a_bar"] for row in sweep(recs, GRID, ("ideal",))]
    assert a[0] == 2.0 and a[-1] == 1.0
    with pytest.raises(Empty):
        sweep(recs, [])


def test_ranks_ties():
    np.testing.assert_array_equal(_ranks(np.array([3.0, 1.0, 3.0, 2.0])), [3.5, 1.0, 3.5, 2.0])


def test_wilcoxon_all_positive():
    W, p = wilcoxon_one_sided([1, 2, 3, 4, 5, 6])
    assert W == 21 and p == 1 / 64


def test_wilcoxon_symmetric_pairs():
    _, p = wilcoxon_one_sided([1, -1, 2, -2, 3, -3, 4, -4, 5, -5])
    assert abs(p - 0.5) <= 0.05


def test_wilcoxon_drops_zeros_and_rejects_all_zero():
    assert wilcoxon_one_sided([0, 0, 1, 2]) == wilcoxon_one_sided([1, 2])
    with pytest.raises(AllZero):
        wilcoxon_one_sided([0.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-6, 6), min_size=1, max_size=12))
def test_exact_matches_counting_oracle(diffs):
    d = np.array([x for x in diffs if x != 0], dtype=float)
    if d.size == 0:
        return
    W, p = wilcoxon_one_sided(d, method="exact")
    assert abs(p - signed_rank_upper_p(_ranks(np.abs(d)), W)) <= 1e-12


def test_exact_matches_scipy_without_ties():
    from scipy.stats import wilcoxon

    rng = np.random.default_rng(4)
    for _ in range(10):
        d = rng.standard_normal(9) + 0.4
        _, p = wilcoxon_one_sided(d, method="exact")
        assert p == pytest.approx(wilcoxon(d, alternative="greater", method="exact").pvalue, abs=1e-12)


def test_normal_close_to_exact_at_12(rng):
    for _ in range(30):
        d = rng.standard_normal(12)
        assert abs(wilcoxon_one_sided(d, method="exact")[1] - wilcoxon_one_sided(d, method="normal")[1]) <= 0.02


def test_wilcoxon_rows_and_csv(tmp_path):
    recs = random_records(3, n=40)
    rows = wilcoxon_rows(recs)
    assert [r["baseline"] for r in rows] == ["region", "google_primary", "google_dual"]
    for r in rows:
        assert r["ci_lo"] <= r["mean_diff"] <= r["ci_hi"]
    write_csv(rows, WILCOXON_COLUMNS, tmp_path / "w.csv")
    write_csv(sweep(recs, GRID), METRIC_COLUMNS, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert lines[10].split(",")[1] == "inf"
