"""Command-line entry point: ``ideal-dispatch <subcommand> [options]``.

Every subcommand writes its outputs plus a ``manifest.json`` (package and
library versions, seed, arguments and their hash, input file digests) into
``--out-dir``. Exit status is 0 on success, 1 on runtime errors and 2 on
usage errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .errors import IdealError


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_manifest(args, inputs=(), extra=None) -> None:
    import scipy

    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(cfg, sort_keys=True, default=str)
    doc = {
        "command": args.command,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "seed": args.seed,
        "threads": args.threads,
        "config": json.loads(blob),
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs if p and os.path.exists(p)},
    }
    if extra:
        doc.update(extra)
    _write_json(doc, os.path.join(args.out_dir, "manifest.json"))


def _out(args, name) -> str:
    return os.path.join(args.out_dir, name)


# subcommands ---------------------------------------------------------------


def cmd_gen_world(args):
    from .simworld import WorldConfig, generate_world

    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    for key in ("rows", "cols", "rho_true", "noise_sigma", "d_true"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    if args.no_drift:
        doc["drift"] = False
    if args.depot:
        doc["depots"] = list(args.depot)
    world = generate_world(args.seed, WorldConfig.from_json(doc))
    world.save(_out(args, "world.json"))
    world.network.save(_out(args, "network.json"))
    write_manifest(args, [args.config], {"depots": list(world.depots)})
    print(f"world: {world.network.n_nodes} nodes, {world.network.n_edges} edges, depots {list(world.depots)}")


def cmd_gen_data(args):
    from .simworld import TrafficWorld, generate_dataset
    from .training import save_samples

    world = TrafficWorld.load(args.world)
    samples = generate_dataset(world, args.n, args.seed)
    save_samples(samples, _out(args, "samples.jsonl"))
    write_manifest(args, [args.world])
    print(f"wrote {len(samples)} samples")


def cmd_train(args):
    import csv

    from .netgraph import RoadNetwork
    from .nets import init_model
    from .training import TrainConfig, calibrate_head, load_samples, train

    net = RoadNetwork.load(args.network)
    samples = load_samples(args.samples)
    doc = {"seed": args.seed}
    if args.config:
        with open(args.config) as fh:
            doc.update(json.load(fh))
    if args.iterations is not None:
        doc["iterations"] = args.iterations
    cfg = TrainConfig.from_json(doc)
    model = init_model(args.seed, d=args.d, hidden=args.hidden, network=net, contexts=[s.context for s in samples])
    if not args.no_calibrate:
        calibrate_head(model, net, samples)
    res = train(model, net, samples, cfg)
    res.model.save(args.out_model or _out(args, "model.json"))
    if res.model_R is not None:
        res.model_R.save(_out(args, "model_R.json"))
    trace_path = args.trace_csv or _out(args, "train_trace.csv")
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "batch_loss"])
        for k, v in enumerate(res.loss_trace):
            w.writerow([k, repr(v)])
    write_manifest(args, [args.network, args.samples, args.config],
                   {"train_config": cfg.to_json(), "R": res.R, "delta": res.delta, "stopped_at": res.stopped_at,
                    "train_loss": [[k, v] for k, v in res.train_trace]})
    print(f"training loss {res.train_trace[0][1]:.4g} -> {res.train_trace[-1][1]:.4g}")


def _radius_job(payload):
    from .errors import NoConvergence, UnboundedRadius
    from .netgraph import RoadNetwork
    from .nets import RepresentationModel, context_embedding
    from .scenario import target_radius
    from .training import Sample

    model_doc, net_doc, sample_docs = payload
    model = RepresentationModel.from_json(model_doc)
    net = RoadNetwork.from_json(net_doc)
    out = []
    for doc in sample_docs:
        s = Sample.from_json(doc)
        try:
            rho = target_radius(model, net, s)
        except (UnboundedRadius, NoConvergence) as exc:
            out.append({"skipped": str(exc)})
            continue
        out.append({"theta": context_embedding(model, s.context).tolist(), "rho": rho})
    return out


def _chunks(seq, n):
    k = max(1, math.ceil(len(seq) / n))
    return [seq[i:i + k] for i in range(0, len(seq), k)]


def _parallel(func, payloads, threads):
    if threads <= 1:
        return [func(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(func, payloads))


def cmd_radius_targets(args):
    from .netgraph import RoadNetwork
    from .nets import RepresentationModel
    from .training import load_samples

    model = RepresentationModel.load(args.model)
    net = RoadNetwork.load(args.network)
    docs = [s.to_json() for s in load_samples(args.samples)]
    parts = _parallel(_radius_job, [(model.to_json(), net.to_json(), c) for c in _chunks(docs, args.threads)],
                      args.threads)
    rows = [r for part in parts for r in part]
    kept = [r for r in rows if "rho" in r]
    with open(_out(args, "radius_targets.jsonl"), "w") as fh:
        for r in kept:
            fh.write(json.dumps(r) + "\n")
    write_manifest(args, [args.model, args.network, args.samples], {"skipped": len(rows) - len(kept)})
    print(f"{len(kept)} radius targets, {len(rows) - len(kept)} skipped")


def cmd_fit_radius(args):
    from .nets import init_radius_model
    from .training import fit_radius

    thetas, rhos = [], []
    with open(args.targets) as fh:
        for line in fh:
            if line.strip():
                doc = json.loads(line)
                thetas.append(doc["theta"])
                rhos.append(doc["rho"])
    d = len(thetas[0]) if thetas else 8
    rm = init_radius_model(args.seed, d=d)
    fitted, trace = fit_radius(rm, thetas, rhos, epochs=args.epochs, lr=args.lr, seed=args.seed)
    fitted.save(args.out_model or _out(args, "radius.json"))
    write_manifest(args, [args.targets], {"mae": trace})
    print(f"radius MAE {trace[0]:.4g} -> {trace[-1]:.4g}")


def _threshold_spec(args):
    from .policy import ThresholdSpec

    return ThresholdSpec(C=args.C, kind=args.risk_curve, lam0=args.lam0, tau=args.tau)


def cmd_dispatch(args):
    from .netgraph import RoadNetwork, path_from_edge_ids
    from .nets import RadiusModel, RepresentationModel
    from .policy import decide

    model = RepresentationModel.load(args.model)
    rm = RadiusModel.load(args.radius_model) if args.radius_model else None
    if rm is None and args.rho is None:
        raise ValueError("need --radius-model or --rho")
    net = RoadNetwork.load(args.network)
    with open(args.context_json) as fh:
        ctx = np.array(json.load(fh), dtype=float)
    z1 = path_from_edge_ids(net, args.z1) if args.z1 else None
    dec = decide(model, rm, net, ctx, args.depot, args.dest, _threshold_spec(args), z1=z1, rho=args.rho,
                 dca_kw={"seed": args.seed})
    doc = dec.to_json(net)
    _write_json(doc, _out(args, "decision.json"))
    write_manifest(args, [args.model, args.radius_model, args.network, args.context_json])
    print(json.dumps(doc))


def _replay_job(payload):
    from .evalkit import run_replay
    from .nets import RadiusModel, RepresentationModel
    from .simworld import Incident, WorldConfig, generate_world

    world_doc, model_doc, rm_doc, incs, q, seed = payload
    world = generate_world(world_doc["seed"], WorldConfig.from_json(world_doc["config"]))
    incidents = [Incident(i, t, dest, world.context_at(t)) for i, t, dest in incs]
    recs = run_replay(world, RepresentationModel.from_json(model_doc), RadiusModel.from_json(rm_doc),
                      incidents, q=q, dca_kw={"seed": seed})
    return [record_to_json(r) for r in recs]


def record_to_json(r) -> dict:
    return {"incident": r.incident, "times": r.times, "primary": r.primary, "region": r.region,
            "optimistic": r.optimistic, "pessimistic": r.pessimistic, "gap": r.gap,
            "z2_origin": r.z2_origin, "queries": r.queries}


def record_from_json(doc):
    from .evalkit import ReplayRecord

    return ReplayRecord(doc["incident"], doc["times"], doc["primary"], doc["region"], doc["optimistic"],
                        doc["pessimistic"], doc["gap"], doc["z2_origin"], doc.get("queries", {}))


def load_records(path) -> list:
    with open(path) as fh:
        return [record_from_json(json.loads(line)) for line in fh if line.strip()]


def cmd_replay(args):
    from .evalkit import METRIC_COLUMNS, WILCOXON_COLUMNS, default_rows, wilcoxon_rows, write_csv
    from .nets import RadiusModel, RepresentationModel
    from .simworld import TrafficWorld, generate_incidents

    world = TrafficWorld.load(args.world)
    model = RepresentationModel.load(args.model)
    rm = RadiusModel.load(args.radius_model)
    incidents = generate_incidents(world, args.n_incidents, args.seed)
    incs = [(i.id, i.time, i.dest) for i in incidents]
    payloads = [(world.to_json(), model.to_json(), rm.to_json(), c, args.q, args.seed)
                for c in _chunks(incs, args.threads)]
    docs = [d for part in _parallel(_replay_job, payloads, args.threads) for d in part]
    docs.sort(key=lambda d: d["incident"])
    with open(_out(args, "records.jsonl"), "w") as fh:
        for d in docs:
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    records = [record_from_json(d) for d in docs]
    write_csv(default_rows(records, args.thr), METRIC_COLUMNS, _out(args, "metrics.csv"))
    write_csv(wilcoxon_rows(records, thr=args.thr), WILCOXON_COLUMNS, _out(args, "wilcoxon.csv"))
    write_manifest(args, [args.world, args.model, args.radius_model])
    print(f"replayed {len(records)} incidents")


def _grid(text):
    vals = []
    for tok in text.split(","):
        tok = tok.strip()
        vals.append(math.inf if tok in ("inf", "+inf") else float(tok))
    if vals != sorted(vals):
        raise argparse.ArgumentTypeError("threshold grid must be increasing")
    return vals


def cmd_sweep(args):
    from .evalkit import METRIC_COLUMNS, sweep, write_csv

    records = load_records(args.records)
    rows = sweep(records, args.grid)
    write_csv(rows, METRIC_COLUMNS, _out(args, "pareto.csv"))
    write_manifest(args, [args.records])
    for r in rows:
        print(f"{r['strategy']:16s} thr={r['thr']:>8} a_bar={r['a_bar']:.3f} mean={r['mean']:.2f}")


def cmd_report(args):
    from .evalkit import default_rows, wilcoxon_rows

    records = load_records(args.records)
    lines = [f"{len(records)} incidents, threshold {args.thr} s", ""]
    lines.append(f"{'strategy':16s} {'a_bar':>6s} {'mean':>8s} {'p95':>8s} {'cvar95':>8s} {'opt_rate':>8s}")
    for r in default_rows(records, args.thr):
        lines.append(f"{r['strategy']:16s} {r['a_bar']:6.3f} {r['mean']:8.2f} {r['p95']:8.2f} "
                     f"{r['cvar95']:8.2f} {r['cand_opt_rate']:8.3f}")
    lines.append("")
    for r in wilcoxon_rows(records, thr=args.thr):
        lines.append(f"vs {r['baseline']:16s} n={r['n']} nonzero={r['n_nonzero']} "
                     f"mean_diff={r['mean_diff']:.2f} [{r['ci_lo']:.2f}, {r['ci_hi']:.2f}] W={r['W']} p={r['p']:.3g}")
    text = "\n".join(lines) + "\n"
    with open(_out(args, "report.txt"), "w") as fh:
        fh.write(text)
    write_manifest(args, [args.records])
    sys.stdout.write(text)


def cmd_selftest(args):
    from .acceptance import run_all

    results = run_all(verbose=True)
    write_manifest(args, extra={"acceptance": {k: ok for k, ok, _ in results}})
    if not all(ok for _, ok, _ in results):
        raise RuntimeError("acceptance criteria failed: " + ", ".join(k for k, ok, _ in results if not ok))


# parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed for all named sub-streams")
    common.add_argument("--threads", type=int, default=1, help="worker processes for replay and radius targets")
    common.add_argument("--out-dir", default=".", help="directory for outputs and manifest.json")

    p = argparse.ArgumentParser(prog="ideal-dispatch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-world", parents=[common], help="generate a synthetic world")
    s.add_argument("--config", help="WorldConfig JSON")
    s.add_argument("--rows", type=int)
    s.add_argument("--cols", type=int)
    s.add_argument("--rho-true", type=float)
    s.add_argument("--noise-sigma", type=float)
    s.add_argument("--d-true", type=int)
    s.add_argument("--no-drift", action="store_true")
    s.add_argument("--depot", action="append", help="depot node (repeatable)")
    s.set_defaults(func=cmd_gen_world)

    s = sub.add_parser("gen-data", parents=[common], help="simulate trip records")
    s.add_argument("--world", required=True)
    s.add_argument("--n", type=int, default=200)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train the representation model")
    s.add_argument("--network", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--config", help="TrainConfig JSON")
    s.add_argument("--iterations", type=int)
    s.add_argument("--d", type=int, default=8)
    s.add_argument("--hidden", type=int, default=32)
    s.add_argument("--no-calibrate", action="store_true", help="skip the output-bias calibration")
    s.add_argument("--out-model")
    s.add_argument("--trace-csv")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("radius-targets", parents=[common], help="compute per-sample target radii")
    s.add_argument("--model", required=True)
    s.add_argument("--network", required=True)
    s.add_argument("--samples", required=True)
    s.set_defaults(func=cmd_radius_targets)

    s = sub.add_parser("fit-radius", parents=[common], help="fit the radius network by MAE")
    s.add_argument("--targets", required=True)
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--out-model")
    s.set_defaults(func=cmd_fit_radius)

    s = sub.add_parser("dispatch", parents=[common], help="decide single or dual dispatch for one call")
    s.add_argument("--model", required=True)
    s.add_argument("--radius-model")
    s.add_argument("--rho", type=float, help="override the predicted radius")
    s.add_argument("--network", required=True)
    s.add_argument("--context-json", required=True, help="JSON list of 27 context values")
    s.add_argument("--depot", action="append", required=True)
    s.add_argument("--dest", required=True)
    s.add_argument("--z1", type=int, nargs="+", help="explicit primary path as edge ids")
    s.add_argument("--C", type=float, default=10.0)
    s.add_argument("--risk-curve", choices=("constant", "exp_decay"), default="constant")
    s.add_argument("--lam0", type=float, default=0.05)
    s.add_argument("--tau", type=float, default=600.0)
    s.set_defaults(func=cmd_dispatch)

    s = sub.add_parser("replay", parents=[common], help="candidate-set replay over synthetic incidents")
    s.add_argument("--world", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--radius-model", required=True)
    s.add_argument("--n-incidents", type=int, default=200)
    s.add_argument("--q", type=int, default=5, help="hybrid prefix length")
    s.add_argument("--thr", type=float, default=30.0)
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("sweep", parents=[common], help="threshold sweep over replay records")
    s.add_argument("--records", required=True)
    s.add_argument("--grid", type=_grid, default=_grid("-1,0,5,10,20,40,80,160,320,inf"))
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("report", parents=[common], help="text summary of replay records")
    s.add_argument("--records", required=True)
    s.add_argument("--thr", type=float, default=30.0)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("selftest", parents=[common], help="run the acceptance suite")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        os.makedirs(args.out_dir, exist_ok=True)
        args.func(args)
    except (IdealError, OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
