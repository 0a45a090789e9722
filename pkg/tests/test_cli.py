import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from mtdetect.cli import EXIT_CODES, grid_range, main, sci_int
from mtdetect.core import AutocorrSet


def run(*argv):
    return main([str(a) for a in argv])


def err_json(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_numeric_flag_parsing():
    assert sci_int("1e7") == 10**7 and sci_int("12") == 12
    assert grid_range("2:5") == [2, 3, 4, 5]
    assert grid_range("5:5:25") == [5, 10, 15, 20, 25]
    assert grid_range("3,7") == [3, 7]


def test_exit_codes_are_distinct():
    assert len(set(EXIT_CODES.values())) == len(EXIT_CODES)
    assert EXIT_CODES["ok"] == 0


def test_pipeline_end_to_end(tmp_path):
    y, ac, est, ev = (str(tmp_path / n) for n in ("y.bin", "ac.json", "x.json", "err.json"))
    assert run("synth", "--model", "separated", "--k", 1, "--l", 11, "--gamma", 0.3, "--sigma", 1,
               "--n", "1e7", "--seed", 7, "-o", y) == 0
    assert run("ac", "--order", 3, "-i", y, "-o", ac) == 0
    a = AutocorrSet.load(ac)
    assert a.n_samples == 10**7 and a.L == 11
    assert run("solve-homo", "-i", ac, "-o", est) == 0
    assert run("eval", "-e", est, "-t", y + ".json", "-o", ev) == 0
    out = json.loads(open(ev).read())
    assert out["errors"][0] < 0.5
    sol = json.loads(open(est).read())
    assert sol["gamma_hat"] == pytest.approx(0.3, rel=0.05)
    man = json.loads(open(est + ".run.json").read())
    assert man["command"] == "solve-homo" and ac in man["inputs"]


def test_known_sigma_and_poisson_paths(tmp_path):
    y, ac, est = (str(tmp_path / n) for n in ("y.bin", "ac.json", "x.json"))
    assert run("synth", "--model", "poisson", "--l", 5, "--gamma", 0.5, "--sigma", 0.5, "--n", "2e6",
               "--seed", 1, "-o", y) == 0
    assert run("ac", "-i", y, "-o", ac, "--segment-length", "500000", "--threads", 2) == 0
    assert run("solve-homo", "-i", ac, "--model", "poisson", "-o", est) == 0
    assert json.loads(open(est).read())["method"] == "poisson_explicit"
    assert run("solve-homo", "-i", ac, "--sigma", "known:0.5", "-o", est) == 0
    assert json.loads(open(est).read())["method"] == "direct"


def test_determinism_byte_identical(tmp_path):
    args = ["synth", "--k", 2, "--l", 6, "--gamma", 0.2, "--sigma", 1, "--n", "50000", "--seed", 3]
    y = str(tmp_path / "y.bin")
    assert run(*args, "-o", y) == 0
    first = {s: open(y + s, "rb").read() for s in ("", ".json", ".manifest.jsonl", ".run.json")}
    assert run(*args, "-o", y) == 0
    for s, data in first.items():
        assert open(y + s, "rb").read() == data
    ac = str(tmp_path / "ac.json")
    run("ac", "-i", y, "-o", ac)
    a = open(ac + ".bin", "rb").read()
    run("ac", "-i", y, "-o", ac)
    assert open(ac + ".bin", "rb").read() == a


def test_solve_hetero_and_eval(tmp_path):
    sig = tmp_path / "sig.json"
    rng = np.random.default_rng(0)
    sig.write_text(json.dumps([rng.standard_normal(5).tolist()]))
    y, ac, rep, ev = (str(tmp_path / n) for n in ("y.bin", "ac.json", "r.json", "e.json"))
    run("synth", "--l", 5, "--gamma", 0.3, "--sigma", 0, "--n", "200000", "--signals", sig, "-o", y)
    run("ac", "-i", y, "-o", ac)
    assert run("solve-hetero", "-i", ac, "--k", 1, "--l", 5, "--starts", 4, "-o", rep) == 0
    assert json.loads(open(rep).read())["format"] == "mtdetect.solve_report"
    assert run("eval", "-e", rep, "-t", y + ".json", "--shift", "-o", ev) == 0
    assert json.loads(open(ev).read())["errors"][0] < 1e-6


def test_solve_2d_pipeline(tmp_path):
    y, ac, pre = (str(tmp_path / n) for n in ("f.bin", "ac.json", "img"))
    assert run("synth", "--dim", 2, "--l", 6, "--gamma", 0.05, "--sigma", 0, "--obs", 3, "--size", 60,
               "--occurrences", 3, "--fixed-count", "-o", y) == 0
    assert run("ac", "--order", 2, "-i", y, "-o", ac) == 0
    assert run("solve-2d", "-i", ac, "-o", pre, "--stream-header", y + ".json", "--seeds", 5,
               "--max-iter", 20000) == 0
    summary = json.loads(open(pre + ".json").read())
    assert np.fromfile(pre + ".bin", dtype="<f8").size == 36
    assert open(pre + ".residual.csv").readline().strip() == "iteration,residual"
    ev = str(tmp_path / "e.json")
    assert run("eval", "-e", pre + ".json", "-t", y + ".json", "-o", ev) == 0
    assert summary["converged"]
    assert json.loads(open(ev).read())["errors"][0] < 1e-3


def test_phase_diagram_csv(tmp_path):
    out = str(tmp_path / "pd.csv")
    assert run("phase-diagram", "--l", "3:4", "--k", "1", "--starts", 3, "-o", out) == 0
    lines = open(out).read().splitlines()
    assert lines[0] == "K,L,success_fraction,worst_error,over_bound,best_cost"
    assert len(lines) == 3


def test_empty_stream(tmp_path, capsys):
    y = tmp_path / "empty.bin"
    y.write_bytes(b"")
    code = run("ac", "-i", y, "--l", 3, "-o", tmp_path / "ac.json")
    assert code == EXIT_CODES["empty"] != 0
    assert "empty stream" in err_json(capsys)["message"]


def test_usage_errors(tmp_path, capsys):
    assert run("synth", "--bogus") == EXIT_CODES["usage"]
    assert err_json(capsys)["error"] == "usage"
    assert run() == EXIT_CODES["usage"]
    assert run("solve-homo", "-i", tmp_path / "nope.json") == EXIT_CODES["io"]


def test_model_and_format_errors(tmp_path, capsys):
    code = run("synth", "--l", 21, "--gamma", 0.6, "--n", 1000, "-o", tmp_path / "y.bin")
    assert code == EXIT_CODES["model"]
    assert "density exceeds" in err_json(capsys)["message"]
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "mtdetect.autocorr", "format_version": 99}')
    assert run("solve-homo", "-i", bad) == EXIT_CODES["format"]
    bad.write_text("not json")
    assert run("solve-homo", "-i", bad) == EXIT_CODES["format"]


def test_console_script_entry_point():
    exe = shutil.which("mtdetect")
    cmd = [exe] if exe else [sys.executable, "-m", "mtdetect.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "mtdetect" in out.stdout
