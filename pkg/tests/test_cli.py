import json
import os

import numpy as np
import pytest

from ideal_dispatch.acceptance import pipeline
from ideal_dispatch.cli import load_records, main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("pipe"))
    codes = pipeline(out, seed=5, n_samples=40, iterations=10, n_incidents=15)
    assert codes == [0] * 7
    return out


def test_outputs_and_manifest(run_dir):
    for name in ("world.json", "network.json", "samples.jsonl", "model.json", "train_trace.csv",
                 "radius_targets.jsonl", "radius.json", "records.jsonl", "metrics.csv", "wilcoxon.csv",
                 "pareto.csv", "manifest.json"):
        assert os.path.exists(os.path.join(run_dir, name)), name
    man = json.load(open(os.path.join(run_dir, "manifest.json")))
    assert man["seed"] == 5 and man["command"] == "sweep"
    assert len(load_records(os.path.join(run_dir, "records.jsonl"))) == 15


def test_report_and_dispatch(run_dir, capsys):
    j = lambda n: os.path.join(run_dir, n)  # noqa: E731
    assert main(["report", "--records", j("records.jsonl"), "--out-dir", run_dir]) == 0
    assert "ideal_dual" in open(j("report.txt")).read()
    with open(j("ctx.json"), "w") as fh:
        json.dump(list(np.zeros(27)), fh)
    code = main(["dispatch", "--model", j("model.json"), "--radius-model", j("radius.json"), "--network",
                 j("network.json"), "--context-json", j("ctx.json"), "--depot", "r1c1", "--depot", "r4c4",
                 "--dest", "r5c5", "--out-dir", run_dir])
    assert code == 0
    doc = json.load(open(j("decision.json")))
    assert doc["tau"] in (0, 1) and doc["thr_s"] == pytest.approx(200.0)


def test_missing_model_exit_1(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    code = main(["dispatch", "--model", missing, "--rho", "0.1", "--network", missing, "--context-json", missing,
                 "--depot", "a", "--dest", "b", "--out-dir", str(tmp_path)])
    assert code == 1
    assert "nope.json" in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    assert main([]) == 2
    assert main(["train"]) == 2
    assert main(["gen-world", "--threads", "0"]) == 2


def test_threads_agree(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    for out, threads in ((a, "1"), (b, "2")):
        assert main(["gen-world", "--seed", "2", "--out-dir", out]) == 0
        assert main(["gen-data", "--world", os.path.join(a, "world.json"), "--n", "12", "--seed", "2",
                     "--out-dir", out]) == 0
        assert main(["train", "--network", os.path.join(out, "network.json"), "--samples",
                     os.path.join(out, "samples.jsonl"), "--iterations", "5", "--seed", "2", "--out-dir", out]) == 0
        assert main(["radius-targets", "--model", os.path.join(out, "model.json"), "--network",
                     os.path.join(out, "network.json"), "--samples", os.path.join(out, "samples.jsonl"),
                     "--threads", threads, "--seed", "2", "--out-dir", out]) == 0
    assert open(os.path.join(a, "radius_targets.jsonl")).read() == open(os.path.join(b, "radius_targets.jsonl")).read()
