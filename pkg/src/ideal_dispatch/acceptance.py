"""Acceptance suite: twelve oracle- and property-based checks of the whole pipeline.

Each ``check_*`` function returns ``(ok, detail)``; :func:`run_all` runs them
in order and is what ``ideal-dispatch selftest`` and the test suite call.
"""
from __future__ import annotations

import contextlib
import io
import math
import os
import tempfile
import time

import numpy as np

from .dca import gamma_bounds, gamma_residual, optimistic_gap, path_matrix, root_search, solve_subproblem
from .netgraph import OdSpec, build_network, default_features, dijkstra, enumerate_simple_paths
from .nets import (LossKind, backward_through_path, edge_costs, embed_edges, flat_grads, flat_params,
                   init_model, init_radius_model, set_flat_params)
from .oracles import (bisect_root, gap_oracle_2d, linear_values, sample_feasible_batch, signed_rank_upper_p,
                      target_radius_oracle_2d)
from .policy import brute_force_pthr, secondary_candidate
from .scenario import (burg_divergence, costs_under_metric, dual_certificate, eig_interval, kappa,
                       sample_feasible, target_radius_from_embeddings)
from .training import Sample, TrainConfig, calibrate_head, sample_loss, train

SWEEP_GRID = (-1.0, 0.0, 5.0, 10.0, 20.0, 40.0, 80.0, 160.0, 320.0, math.inf)


def diamond_network():
    return build_network("abcd", [(1, "a", "b", 1), (2, "b", "d", 1), (3, "a", "c", 1), (4, "c", "d", 1)])


def grid_network(n=3):
    """``n x n`` grid with edges pointing right and down (12 edges for n=3)."""
    nodes = [f"n{r}{c}" for r in range(n) for c in range(n)]
    edges, k = [], 1
    for r in range(n):
        for c in range(n):
            if c < n - 1:
                edges.append((k, f"n{r}{c}", f"n{r}{c + 1}", 1.0))
                k += 1
            if r < n - 1:
                edges.append((k, f"n{r}{c}", f"n{r + 1}{c}", 1.0))
                k += 1
    return build_network(nodes, edges)


def small_instances(n, seed):
    """Alternating diamond and 3x3-grid gap instances in d=2 with random radii."""
    rng = np.random.default_rng(seed)
    nets = [(diamond_network(), OdSpec(("a",), "d")), (grid_network(), OdSpec(("n00",), "n22"))]
    paths = [enumerate_simple_paths(net, od) for net, od in nets]
    out = []
    for i in range(n):
        net, od = nets[i % 2]
        Phi = rng.standard_normal((net.n_edges, 2)) * rng.uniform(0.3, 2.0, (net.n_edges, 1))
        rho = float(rng.uniform(0.05, 1.0))
        z1, _ = dijkstra(net, edge_costs(Phi), od)
        out.append((net, od, paths[i % 2], Phi, rho, z1))
    return out


# 1-2 ----------------------------------------------------------------------


def check_subproblem(n=100, n_samples=10_000, seed=1):
    rng = np.random.default_rng(seed)
    worst_div = worst_margin = worst_stat = 0.0
    solve_time = 0.0
    for i in range(n):
        d = 2 + i % 5
        A = rng.standard_normal((d, d))
        G = 0.5 * (A + A.T)
        rho = float(rng.uniform(0.05, 2.0))
        t0 = time.perf_counter()
        X, gamma = solve_subproblem(G, rho, return_gamma=True)
        solve_time += time.perf_counter() - t0
        worst_div = max(worst_div, abs(burg_divergence(X) - rho))
        Q, lam = sample_feasible_batch(rho, rng, d, n_samples)
        best_sampled = min(float(linear_values(G, Q, lam).min()), float(np.trace(G)))
        worst_margin = min(worst_margin, best_sampled - float(np.sum(G * X)))
        resid = G + gamma * (np.eye(d) - np.linalg.inv(X))
        worst_stat = max(worst_stat, float(np.linalg.norm(resid) / np.linalg.norm(G)))
    ok = worst_div <= 1e-6 and worst_margin >= -1e-8 and worst_stat <= 1e-8 and solve_time < 2.0
    return ok, (f"|D-rho|max={worst_div:.1e} margin_min={worst_margin:.1e} "
                f"stationarity={worst_stat:.1e} solve_time={solve_time:.2f}s")


def check_root_search(n=1000, seed=2):
    rng = np.random.default_rng(seed)
    worst_res = worst_diff = 0.0
    inside = True
    for i in range(n):
        d = int(rng.integers(1, 9))
        lam = rng.standard_normal(d) * 10.0 ** rng.uniform(-2, 2)
        rho = float(10.0 ** rng.uniform(-3, 1))
        g = root_search(lam, rho)
        g0, gmax = gamma_bounds(lam, rho)
        inside &= g0 < g <= gmax
        worst_res = max(worst_res, abs(gamma_residual(g, lam, rho)))
        gb = bisect_root(lambda x: gamma_residual(x, lam, rho), g0, gmax)
        worst_diff = max(worst_diff, abs(g - gb) / max(1.0, gb))
    ok = inside and worst_res <= 1e-8 and worst_diff <= 1e-8
    return ok, f"|phi|max={worst_res:.1e} rel_diff_max={worst_diff:.1e} in_bracket={inside}"


# 3-5 ----------------------------------------------------------------------


def check_dca_certificates(n=50, seed=3):
    worst_rise = worst_w = worst_budget = -math.inf
    for i, (net, od, paths, Phi, rho, z1) in enumerate(small_instances(n, seed)):
        res = optimistic_gap(Phi, net, od, z1, rho, seed=i)
        f_star = -gap_oracle_2d(Phi, paths, z1, rho)
        obj = np.array(res.objective)
        if obj.size > 1:
            worst_rise = max(worst_rise, float(np.max(np.diff(obj))))
        if res.trace:
            worst_w = max(worst_w, -float(min(res.trace)))
        worst_budget = max(worst_budget, float(sum(res.trace)) - (obj[0] - f_star))
    ok = worst_rise <= 1e-9 and worst_w <= 1e-9 and worst_budget <= 1e-6
    return ok, f"max_rise={worst_rise:.1e} min_W={-worst_w:.1e} budget_excess={worst_budget:.1e}"


def check_gap_bound(n=100, seed=4):
    inst = small_instances(n, seed)
    oracle = [gap_oracle_2d(Phi, paths, z1, rho) for net, od, paths, Phi, rho, z1 in inst]
    t0 = time.perf_counter()
    est = [optimistic_gap(Phi, net, od, z1, rho, seed=i).gap_estimate
           for i, (net, od, paths, Phi, rho, z1) in enumerate(inst)]
    elapsed = time.perf_counter() - t0
    over = max(e - o for e, o in zip(est, oracle))
    near = sum(e >= 0.95 * o for e, o in zip(est, oracle))
    ok = over <= 1e-6 and near >= 0.9 * n and elapsed < 30.0
    return ok, f"max_excess={over:.1e} near_exact={near}/{n} dca_time={elapsed:.1f}s"


def check_policy_oracle(n=50, seed=5):
    rng = np.random.default_rng(seed)
    net = grid_network()
    worst = 0.0
    mismatched = 0
    for i in range(n):
        od = OdSpec(("n00", "n01"), "n22") if i % 2 else OdSpec(("n00",), "n22")
        Phi = rng.standard_normal((net.n_edges, 2))
        rho = float(rng.uniform(0.05, 0.8))
        thr = float(rng.uniform(0.0, 3.0))
        z1, _ = dijkstra(net, edge_costs(Phi), od)
        tau_b, _, surplus_b = brute_force_pthr(Phi, rho, z1, thr, net, od)
        gap, z2 = secondary_candidate(Phi, net, od, z1, rho, {"seed": i})
        tau = gap > thr
        surplus = gap - thr if tau else 0.0
        if tau and z2 is not None:
            # the surplus must be attained by the returned path itself
            own = gap_oracle_2d(Phi, [z2], z1, rho)
            surplus = min(surplus, own - thr)
        err = abs(surplus - surplus_b)
        worst = max(worst, err)
        mismatched += err > 1e-3
    return mismatched == 0, f"mismatches={mismatched}/{n} max_surplus_err={worst:.1e}"


# 6-7 ----------------------------------------------------------------------


def _gradient_network():
    rng = np.random.default_rng(60)
    nodes = "abcdef"
    pairs = [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d"), ("b", "c"), ("d", "e"), ("c", "e"),
             ("e", "f"), ("d", "f")]
    edges = []
    for k, (u, v) in enumerate(pairs, start=1):
        length = float(rng.uniform(80, 300))
        f = default_features(length)
        f[1] = float(rng.choice([30.0, 50.0, 70.0]))
        edges.append((k, u, v, length, f))
    return build_network(nodes, edges)


def _tie_network():
    """Two routes a-b-d and a-c-d whose edges carry identical features pairwise."""
    f1, f2 = default_features(120.0), default_features(200.0)
    f2[1] = 70.0
    return build_network("abcd", [(1, "a", "b", 120.0, f1), (2, "b", "d", 200.0, f2),
                                  (3, "a", "c", 120.0, f1.copy()), (4, "c", "d", 200.0, f2.copy())])


def check_conservative_gradient(n_probes=20, n_dirs=3, seed=6):
    rng = np.random.default_rng(seed)
    net = _gradient_network()
    od = OdSpec(("a",), "f")
    loss = LossKind("huber", delta=30.0)
    worst = 0.0
    probes = 0
    tries = 0
    while probes < n_probes and tries < 10 * n_probes:
        tries += 1
        model = init_model(int(rng.integers(1 << 30)), d=4, hidden=8, network=net)
        ctx = rng.standard_normal(27)
        sample = Sample(ctx, "a", "f", float(rng.uniform(20, 80)))
        theta = flat_params(model)
        z, _ = dijkstra(net, edge_costs(embed_edges(model, net, ctx)), od)
        _, _, g = sample_loss(model, net, sample, loss)
        g = flat_grads(g)

        def F(x):
            set_flat_params(model, x)
            c = edge_costs(embed_edges(model, net, ctx))
            p, h = dijkstra(net, c, od)
            return loss.value_and_slope(h, sample.t)[0], p

        errs, tie_free = [], True
        for _ in range(n_dirs):
            v = rng.standard_normal(theta.size)
            v /= np.linalg.norm(v)
            h = 1e-6
            fp, pp = F(theta + h * v)
            fm, pm = F(theta - h * v)
            tie_free &= pp.edges == z.edges and pm.edges == z.edges
            fd = (fp - fm) / (2 * h)
            an = float(g @ v)
            errs.append(abs(fd - an) / max(abs(an), 1e-6))
        set_flat_params(model, theta)
        if not tie_free:
            continue
        # runner-up margin keeps the probe away from ties
        c = edge_costs(embed_edges(model, net, ctx))
        paths = enumerate_simple_paths(net, od)
        vals = sorted(p.cost(c) for p in paths)
        if len(vals) > 1 and vals[1] - vals[0] < 1e-3 * vals[0]:
            continue
        probes += 1
        worst = max(worst, max(errs))

    tnet = _tie_network()
    tie_exact = True
    for s in range(5):
        model = init_model(100 + s, d=4, hidden=8, network=tnet)
        ctx = np.random.default_rng(s).standard_normal(27)
        c = edge_costs(embed_edges(model, tnet, ctx))
        tie_exact &= c[0] + c[1] == c[2] + c[3]
        sample = Sample(ctx, "a", "d", 40.0)
        _, _, g_train = sample_loss(model, tnet, sample, loss, beta=1e-3)
        paths = enumerate_simple_paths(tnet, OdSpec(("a",), "d"))
        first = min(paths, key=lambda p: p.edge_ids(tnet))
        _, _, g_frozen = backward_through_path(model, tnet, ctx, first, 40.0, loss, 1e-3)
        tie_exact &= all(np.array_equal(a, b) for a, b in zip(g_train, g_frozen))
    ok = probes == n_probes and worst <= 1e-4 and tie_exact
    return ok, f"probes={probes} fd_rel_err_max={worst:.1e} tie_exact={tie_exact}"


def _realizable_setup(seed=7, n=200):
    from .simworld import WorldConfig, generate_dataset, generate_world

    world = generate_world(seed, WorldConfig(drift=False, rho_true=0.0))
    samples = generate_dataset(world, n, 1)
    model = init_model(1, network=world.network, contexts=[s.context for s in samples])
    calibrate_head(model, world.network, samples)
    return world, samples, model


def check_training(seed=7):
    world, samples, model = _realizable_setup(seed)
    cfg = TrainConfig(iterations=200, holdout=0.0)
    r1 = train(model, world.network, samples, cfg)
    r2 = train(model, world.network, samples, cfg)
    first, last = r1.train_trace[0][1], r1.train_trace[-1][1]
    drop = 1.0 - last / first
    same = np.array_equal(flat_params(r1.model), flat_params(r2.model)) and r1.loss_trace == r2.loss_trace
    return drop >= 0.5 and same, f"loss {first:.3f} -> {last:.3f} (drop {100 * drop:.1f}%) deterministic={same}"


# 8-9 ----------------------------------------------------------------------


def check_target_radius(n=12, seed=8):
    rng = np.random.default_rng(seed)
    net = diamond_network()
    od = OdSpec(("a",), "d")
    paths = enumerate_simple_paths(net, od)
    zero_exact = True
    worst = worst_cert = 0.0
    A = net.incidence
    for i in range(n):
        Phi = rng.standard_normal((net.n_edges, 2))
        _, h_hat = dijkstra(net, edge_costs(Phi), od)
        below = target_radius_from_embeddings(Phi, net, od, h_hat * float(rng.uniform(0.2, 1.0)))
        zero_exact &= below.rho == 0.0
        t = h_hat * float(rng.uniform(1.05, 1.8))
        res = target_radius_from_embeddings(Phi, net, od, t)
        worst = max(worst, abs(res.rho - target_radius_oracle_2d(Phi, paths, t)))
        c = costs_under_metric(Phi, res.X)
        pi, omega = dual_certificate(net, c, "a", "d")
        b = np.zeros(net.n_nodes)
        b[net.check_node("a")], b[net.check_node("d")] = 1.0, -1.0
        slack = float(np.max(A.T @ pi - omega - c))
        value_err = abs(float(b @ pi - omega.sum()) - dijkstra(net, c, od)[1])
        worst_cert = max(worst_cert, slack, value_err, -float(omega.min()))
    ok = zero_exact and worst <= 1e-3 and worst_cert <= 1e-6
    return ok, f"zero_exact={zero_exact} max_rho_err={worst:.1e} certificate_err={worst_cert:.1e}"


def check_burg_geometry(n=1000, seed=9):
    rng = np.random.default_rng(seed)
    worst_eig = worst_kappa = 0.0
    for i in range(n):
        d = 2 + i % 5
        rho = float(10.0 ** rng.uniform(-2, 0.7))
        X = sample_feasible(rho, rng, d)
        m, M = eig_interval(rho)
        lam = np.linalg.eigvalsh(X)
        worst_eig = max(worst_eig, m - lam.min(), lam.max() - M)
        worst_kappa = max(worst_kappa, abs(kappa(m) - rho), abs(kappa(M) - rho))
    ok = worst_eig <= 1e-9 and worst_kappa <= 1e-10
    return ok, f"eig_violation_max={worst_eig:.1e} kappa_roundtrip_err={worst_kappa:.1e}"


# 10-12 --------------------------------------------------------------------


def check_replay(seed=7, n=200):
    from .evalkit import regrets, run_replay, summarize, sweep
    from .simworld import generate_dataset, generate_incidents, generate_world

    world = generate_world(seed)
    samples = generate_dataset(world, 60, 1)
    model = init_model(1, network=world.network, contexts=[s.context for s in samples])
    calibrate_head(model, world.network, samples)
    records = run_replay(world, model, init_radius_model(2), generate_incidents(world, n, 3))
    dominance = True
    for r in records:
        t_dual = r.outcome("ideal_dual")[0]
        t_gdual = r.outcome("google_dual")[0]
        dominance &= t_dual <= r.times[r.primary] and t_dual <= r.times.get("P3", math.inf)
        dominance &= t_gdual <= r.times["P1"] and t_gdual <= r.times["P2"]
    a = [row["a_bar"] for row in sweep(records, SWEEP_GRID, ("ideal",))]
    mono = all(x >= y for x, y in zip(a, a[1:]))
    ends = a[0] == 2.0 and a[-1] == 1.0
    strategies = ("region", "google_primary", "google_dual", "google_interval", "ideal", "ideal_dual")
    nonneg = all(regrets(records, s, t).min() >= 0 for s in strategies for t in SWEEP_GRID)
    rate = {s: summarize(records, s)["cand_opt_rate"] for s in ("google_primary", "ideal_dual")}
    rates = rate["ideal_dual"] >= rate["google_primary"]
    ok = dominance and mono and ends and nonneg and rates
    return ok, (f"dominance={dominance} a_bar={a[0]:g}..{a[-1]:g} monotone={mono} regret>=0={nonneg} "
                f"cand_opt ideal_dual={rate['ideal_dual']:.2f} google_primary={rate['google_primary']:.2f}")


def check_wilcoxon(seed=11):
    from .evalkit import _ranks, wilcoxon_one_sided

    rng = np.random.default_rng(seed)
    worst_exact = worst_normal = 0.0
    for i in range(200):
        n = 1 + i % 12
        d = np.round(rng.standard_normal(n) * 3 + 0.5)  # rounding creates ties and zeros
        d = d[d != 0]
        if d.size == 0:
            continue
        W, p = wilcoxon_one_sided(d, method="exact")
        ref = signed_rank_upper_p(_ranks(np.abs(d)), W)
        worst_exact = max(worst_exact, abs(p - ref))
    for _ in range(50):
        d = rng.standard_normal(12) + 0.3
        _, pe = wilcoxon_one_sided(d, method="exact")
        _, pn = wilcoxon_one_sided(d, method="normal")
        worst_normal = max(worst_normal, abs(pe - pn))
    ok = worst_exact <= 1e-12 and worst_normal <= 0.02
    return ok, f"exact_err_max={worst_exact:.1e} normal_vs_exact_max={worst_normal:.3f}"


def pipeline(out_dir, seed=3, n_samples=80, iterations=40, n_incidents=40):
    """Full CLI pipeline into ``out_dir``; returns the list of exit codes."""
    from .cli import main

    j = lambda name: os.path.join(out_dir, name)  # noqa: E731
    common = ["--seed", str(seed), "--threads", "1", "--out-dir", out_dir]
    steps = [
        ["gen-world"],
        ["gen-data", "--world", j("world.json"), "--n", str(n_samples)],
        ["train", "--network", j("network.json"), "--samples", j("samples.jsonl"), "--iterations", str(iterations)],
        ["radius-targets", "--model", j("model.json"), "--network", j("network.json"), "--samples", j("samples.jsonl")],
        ["fit-radius", "--targets", j("radius_targets.jsonl"), "--epochs", "50"],
        ["replay", "--world", j("world.json"), "--model", j("model.json"), "--radius-model", j("radius.json"),
         "--n-incidents", str(n_incidents)],
        ["sweep", "--records", j("records.jsonl")],
    ]
    codes = []
    with contextlib.redirect_stdout(io.StringIO()):
        for step in steps:
            codes.append(main(step + common))
    return codes


def check_cli_determinism():
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        ca, cb = pipeline(a), pipeline(b)
        with open(os.path.join(a, "metrics.csv"), "rb") as fa, open(os.path.join(b, "metrics.csv"), "rb") as fb:
            same = fa.read() == fb.read()
    ok = same and not any(ca) and not any(cb)
    return ok, f"exit_codes={ca} identical_metrics={same}"


CRITERIA = (
    ("1 subproblem oracle", check_subproblem),
    ("2 root search", check_root_search),
    ("3 DCA certificates", check_dca_certificates),
    ("4 gap lower bound", check_gap_bound),
    ("5 policy vs brute force", check_policy_oracle),
    ("6 conservative gradient", check_conservative_gradient),
    ("7 training progress", check_training),
    ("8 target radius", check_target_radius),
    ("9 Burg geometry", check_burg_geometry),
    ("10 replay properties", check_replay),
    ("11 Wilcoxon", check_wilcoxon),
    ("12 CLI determinism", check_cli_determinism),
)


def run_all(verbose=True) -> list:
    results = []
    t_start = time.perf_counter()
    for name, fn in CRITERIA:
        t0 = time.perf_counter()
        ok, detail = fn()
        results.append((name, ok, detail))
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail} ({time.perf_counter() - t0:.1f}s)", flush=True)
    if verbose:
        print(f"total {time.perf_counter() - t_start:.1f}s")
    return results
