import hashlib
import json
import subprocess
import sys

import pytest

from ergocert.cli import main

EX1 = ["--catalog", "polynomial_drift", "--param", "K=1", "--param", "kappa=2", "--param", "d=1"]


def _manifest_ok(out):
    doc = json.loads((out / "manifest.json").read_text())
    for stage in doc["stages"].values():
        for f in stage["outputs"]:
            assert hashlib.sha256((out / f["file"]).read_bytes()).hexdigest() == f["sha256"]
    return doc


def test_certify_finite(tmp_path):
    out = tmp_path / "run"
    assert main(["certify", *EX1, "--out", str(out)]) == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["verdict"] == "FINITE" and cert["lambda_est"] > 0
    assert (out / "profile.csv").read_text().startswith("r,gamma,iota,I,opt_residual\n")
    doc = _manifest_ok(out)
    assert doc["stages"]["certify"]["config"]["tol"] == 1e-4


def test_certify_infinite(tmp_path):
    with pytest.warns(Warning):
        code = main(["certify", "--catalog", "polynomial_drift", "--param", "kappa=1", "--out", str(tmp_path)])
    assert code == 2


def test_certify_inconclusive(tmp_path):
    assert main(["certify", *EX1, "--max-doublings", "0", "--out", str(tmp_path)]) == 3


def test_certify_degenerate_model_exits_1_with_witness(tmp_path, capsys):
    model = {"name": "deg", "d": 1, "n": 1, "x0": [0.0], "r0": 1.0, "params": {},
             "drift": ["-x1"], "diffusion": [["x1-3"]]}
    path = tmp_path / "deg.json"
    path.write_text(json.dumps(model))
    assert main(["certify", "--model", str(path), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ellipticity" and err["witness"] == [3.0]


def test_bad_inputs_exit_1(tmp_path, capsys):
    assert main(["certify", "--catalog", "nope", "--out", str(tmp_path)]) == 1
    assert "error" in json.loads(capsys.readouterr().err)
    assert main(["certify", "--model", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tol": 1e-3, "nodes": 128}))
    out = tmp_path / "run"
    assert main(["certify", *EX1, "--config", str(cfg), "--nodes", "256", "--out", str(out)]) == 0
    echoed = json.loads((out / "manifest.json").read_text())["stages"]["certify"]["config"]
    assert echoed["tol"] == 1e-3 and echoed["nodes"] == 256


def test_lyapunov_and_report(tmp_path):
    out = tmp_path / "run"
    assert main(["certify", *EX1, "--out", str(out)]) == 0
    assert main(["lyapunov", *EX1, "--certificate", str(out / "certificate.json"),
                 "--samples", "2000", "--out", str(out)]) == 0
    drift = json.loads((out / "drift_check.json").read_text())
    assert drift["pass"] is True
    assert (out / "lyapunov.csv").read_text().startswith("r,lbar,lbar1,lbar2,radial_generator_bound\n")
    assert main(["tv", *EX1, "--dt", "0.01", "--t", "2", "--checkpoints", "0.5,1,2", "--paths", "5000",
                 "--starts", "1;-3", "--ref", "0", "--out", str(out)]) == 0
    assert main(["hitting", *EX1, "--dt", "0.01", "--t", "5", "--paths", "500", "--x", "2;3",
                 "--out", str(out)]) == 0
    assert main(["report", str(out)]) == 0
    text = (out / "report.md").read_text()
    assert "FINITE" in text and "tv_sup.csv" in text
    _manifest_ok(out)


def test_tv_outputs_deterministic(tmp_path):
    args = [*EX1, "--dt", "0.01", "--t", "1", "--checkpoints", "0.5,1", "--paths", "3000",
            "--starts", "1;3", "--ref", "0"]
    for name in ("a", "b"):
        assert main(["tv", *args, "--out", str(tmp_path / name)]) == 0
    for f in ("tv.csv", "tv_sup.csv", "tv_fit.json", "tv_meta.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    header = (tmp_path / "a" / "tv.csv").read_text().splitlines()[0]
    assert header == "t,start_index,x1,tv"


def test_simulate_and_subordinate(tmp_path):
    assert main(["simulate", *EX1, "--dt", "0.01", "--t", "1", "--paths", "2000", "--x", "1",
                 "--out", str(tmp_path)]) == 0
    assert main(["subordinate", *EX1, "--kind", "stable", "--alpha", "0.5", "--dt", "0.01", "--t", "2",
                 "--checkpoints", "0.5,1,2", "--paths", "2000", "--starts", "1;-3", "--ref", "0",
                 "--out", str(tmp_path)]) == 0
    meta = json.loads((tmp_path / "subordinate_meta.json").read_text())
    assert meta["subordinator"]["kind"] == "stable"


def test_check_assumptions_exit_codes(tmp_path):
    assert main(["check-assumptions", *EX1, "--samples", "512", "--out", str(tmp_path / "a")]) == 0
    code = main(["check-assumptions", "--catalog", "langevin_tempered", "--samples", "512",
                 "--out", str(tmp_path / "b")])
    assert code == 2
    a4 = json.loads((tmp_path / "b" / "assumption_A4.json").read_text())
    assert a4["status"] == "VIOLATED" and a4["witness"] is not None


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "ergocert.cli", "certify", *EX1, "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "FINITE" in r.stdout
