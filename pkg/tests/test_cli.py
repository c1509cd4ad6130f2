import csv
import json
import subprocess
import sys

import pytest

from negrec.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY, main


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    assert run("gen-corpus", "--items", 60, "--clusters", 4, "--creators", 6, "--topic-dim", 6, "--seed", 0, "--out", d / "c.json") == 0
    assert run("gen-logs", "--corpus", d / "c.json", "--users", 20, "--length", 8, "--seed", 1, "--out", d / "l.jsonl") == 0
    (d / "t.json").write_text(json.dumps({"epochs": 1, "dim": 4}))
    for v in ("BASELINE", "FEATURE_ONLY"):
        assert run("train", "--corpus", d / "c.json", "--logs", d / "l.jsonl", "--variant", v, "--config", d / "t.json",
                   "--out", d / f"{v}.ckpt", "--report", d / f"{v}.train.json") == 0
        assert run("measure", "--corpus", d / "c.json", "--ckpt", d / f"{v}.ckpt", "--sims", 10, "--k", 4, "--slate", 5,
                   "--seed", 2, "--out", d / "meas" / f"{v}.json") == 0
    assert run("report", "--in", d / "meas", "--out", d / "summary.csv") == 0
    return d


def test_outputs_and_manifests(pipeline):
    d = pipeline
    for out in ("c.json", "l.jsonl", "BASELINE.ckpt", "meas/FEATURE_ONLY.json", "summary.csv"):
        assert (d / out).exists()
        manifest = json.loads((d / (out + ".manifest.json")).read_text())
        assert {"command", "config", "seeds", "inputs", "outputs", "duration_seconds"} <= set(manifest)
        assert str(d / out) in manifest["outputs"]
    assert (d / "BASELINE.train.csv").exists()


def test_summary_csv(pipeline):
    rows = list(csv.DictReader(open(pipeline / "summary.csv")))
    assert [(r["variant"], r["mode"]) for r in rows] == [
        ("BASELINE", "CONTENT"), ("BASELINE", "CREATOR"), ("FEATURE_ONLY", "CONTENT"), ("FEATURE_ONLY", "CREATOR"),
    ]
    assert all(float(r["responsiveness"]) == 0.0 for r in rows if r["variant"] == "BASELINE")


def test_model_policy_logs(pipeline, tmp_path):
    d = pipeline
    out = tmp_path / "onpolicy.jsonl"
    assert run("gen-logs", "--corpus", d / "c.json", "--users", 5, "--length", 4, "--seed", 3,
               "--policy", f"model:{d / 'BASELINE.ckpt'}", "--out", out) == 0
    manifest = json.loads((tmp_path / "onpolicy.jsonl.manifest.json").read_text())
    assert str(d / "BASELINE.ckpt") in manifest["inputs"]


def test_rerun_is_byte_identical(pipeline, tmp_path):
    d = pipeline
    assert run("train", "--corpus", d / "c.json", "--logs", d / "l.jsonl", "--variant", "FEATURE_ONLY",
               "--config", d / "t.json", "--out", tmp_path / "m.ckpt", "--report", tmp_path / "r.json") == 0
    assert (tmp_path / "m.ckpt").read_bytes() == (d / "FEATURE_ONLY.ckpt").read_bytes()


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert err and err[-1].startswith("negrec: error kind=")
    return err[-1]


def test_usage_errors(capsys):
    assert run("bogus") == EXIT_USAGE
    assert "kind=usage" in last_error(capsys)
    assert run("gen-corpus", "--items", 10) == EXIT_USAGE
    last_error(capsys)


def test_sizing_error_is_usage(tmp_path, capsys):
    assert run("gen-corpus", "--items", 5, "--clusters", 3, "--creators", 1, "--topic-dim", 2, "--seed", 0,
               "--out", tmp_path / "c.json") == EXIT_USAGE
    assert "kind=sizing" in last_error(capsys)


def test_unknown_policy(pipeline, tmp_path, capsys):
    assert run("gen-logs", "--corpus", pipeline / "c.json", "--users", 2, "--length", 2, "--seed", 0,
               "--policy", "greedy", "--out", tmp_path / "x") == EXIT_USAGE
    last_error(capsys)


def test_unreadable_inputs(pipeline, tmp_path, capsys):
    assert run("train", "--corpus", tmp_path / "missing.json", "--logs", pipeline / "l.jsonl", "--variant", "BASELINE",
               "--out", tmp_path / "m", "--report", tmp_path / "r") == EXIT_RUNTIME
    assert "kind=unreadable-input" in last_error(capsys)
    bad = tmp_path / "bad.ckpt"
    bad.write_text((pipeline / "BASELINE.ckpt").read_text()[:100])
    assert run("measure", "--corpus", pipeline / "c.json", "--ckpt", bad, "--seed", 0, "--sims", 2,
               "--out", tmp_path / "o.json") == EXIT_RUNTIME
    assert "kind=checksum" in last_error(capsys)


def test_bad_train_config(pipeline, tmp_path, capsys):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"learning_rat": 1}))
    assert run("train", "--corpus", pipeline / "c.json", "--logs", pipeline / "l.jsonl", "--variant", "BASELINE",
               "--config", cfg, "--out", tmp_path / "m", "--report", tmp_path / "r") == EXIT_USAGE
    assert "kind=bad-config" in last_error(capsys)


def test_dimension_mismatch(pipeline, tmp_path, capsys):
    assert run("gen-corpus", "--items", 40, "--clusters", 2, "--creators", 2, "--topic-dim", 6, "--seed", 0,
               "--out", tmp_path / "c40.json") == 0
    assert run("measure", "--corpus", tmp_path / "c40.json", "--ckpt", pipeline / "BASELINE.ckpt", "--seed", 0,
               "--sims", 2, "--out", tmp_path / "o.json") == EXIT_RUNTIME
    assert "kind=dimension" in last_error(capsys)


def test_empty_report_dir(tmp_path, capsys):
    assert run("report", "--in", tmp_path, "--out", tmp_path / "s.csv") == EXIT_RUNTIME
    last_error(capsys)


def test_verify_passes(capsys):
    assert run("verify", "--instances", 3) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 8


def test_verify_failure_exit_code(monkeypatch, capsys):
    from negrec import checks

    monkeypatch.setattr(checks, "gradient_suite", lambda seed, n: [0.5])
    assert run("verify") == EXIT_VERIFY
    assert "kind=verification" in last_error(capsys)


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "negrec.cli", "nope"], capture_output=True, text=True)
    assert res.returncode == EXIT_USAGE
    assert res.stderr.strip().splitlines()[-1].startswith("negrec: error kind=usage")
