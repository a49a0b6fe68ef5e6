import json

import pytest
from numpy.testing import assert_allclose

from rismux import cli, experiment
from rismux.errors import StructuralError
from rismux.experiment import CSV_HEADER
from rismux.selftest import run_checks

QUICK_SWEEP = ["sweep", "--axis", "snr", "--values", "-10:10:10", "--criteria", "er,none",
               "-L", "16", "--trials", "3", "--seed", "5", "--quiet"]


def _run_json(capsys, argv):
    assert cli.main(argv) == 0
    return json.loads(capsys.readouterr().out)


@pytest.mark.parametrize("text,expected", [
    ("-10:2.5:20", [-10 + 2.5 * i for i in range(13)]),
    ("0:1:3", [0.0, 1.0, 2.0, 3.0]),
    ("0:0.1:0.3", [0.0, 0.1, 0.2, 0.30000000000000004]),
    ("25,100,400", [25.0, 100.0, 400.0]),
    ("0.5", [0.5]),
])
def test_parse_values(text, expected):
    assert_allclose(cli.parse_values(text), expected, rtol=0, atol=1e-15)
    assert len(cli.parse_values(text)) == len(expected)


@pytest.mark.parametrize("text", ["1:2", "3:1:0", "0:-1:3", "a,b"])
def test_parse_values_rejects(text):
    with pytest.raises(cli.UsageError):
        cli.parse_values(text)


def test_negative_values_token_joined():
    assert cli._join_negative_values(["--values", "-10:5:0", "-L", "8"]) == \
        ["--values=-10:5:0", "-L", "8"]


@pytest.mark.parametrize("argv", [
    ["sweep", "--bogus"],
    ["optimize", "--criterion", "random"],
    ["sweep", "--axis", "M"],
    ["sweep", "--values", "3,1", "--out", "unused"],
    ["optimize", "--alpha", "1.5"],
    ["optimize", "-L", "0"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 2


def test_unknown_config_key_exit_2(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"alpah": 0.5}))
    with pytest.raises(SystemExit) as info:
        cli.main(["optimize", "--config", str(path)])
    assert info.value.code == 2


def test_optimize_er_reaches_full_rank(capsys):
    out = _run_json(capsys, ["optimize", "--criterion", "er", "-M", "4", "-K", "4",
                             "-L", "100", "--alpha", "0.5", "--seed", "7"])
    assert out["effective_rank_final"] >= 3.99
    assert len(out["lambda_final"]) == 4
    assert out["gram_offdiag_final"] < out["gram_offdiag_initial"]
    assert set(out["rates"]) == {"mmse", "mf", "joint"}
    assert len(out["objective_trace"]) == out["iterations"] + 1


def test_optimize_msv_improves(capsys):
    out = _run_json(capsys, ["optimize", "--criterion", "msv", "--seed", "7",
                             "--max-iterations", "100"])
    assert out["lambda_min_final"] > out["lambda_min_initial"]


def test_optimize_alpha_zero_constant(capsys):
    out = _run_json(capsys, ["optimize", "--alpha", "0", "--seed", "7"])
    trace = out["objective_trace"]
    assert out["iterations"] == 0
    assert all(v == trace[0] for v in trace)


def test_optimize_output_is_a_config(capsys, tmp_path):
    first = _run_json(capsys, ["optimize", "--criterion", "msv", "-L", "16", "--seed", "2",
                               "--max-iterations", "50"])
    path = tmp_path / "out.json"
    path.write_text(json.dumps(first))
    again = _run_json(capsys, ["optimize", "--config", str(path)])
    assert again == first
    flipped = _run_json(capsys, ["optimize", "--config", str(path), "--criterion", "er"])
    assert flipped["resolved"]["criterion"] == "er"
    assert flipped["resolved"]["L"] == 16


def test_selftest_passes(capsys):
    assert cli.main(["selftest", "--instances", "20"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert all(line.startswith("PASS") for line in lines[:-1])
    assert lines[-1].endswith("checks passed")


def test_selftest_corrupt_gradient_fails(capsys):
    assert cli.main(["selftest", "--instances", "10", "--corrupt-gradient"]) == 1
    out = capsys.readouterr().out
    assert "FAIL gradient[er]" in out and "FAIL gradient[msv]" in out


def test_run_checks_default_size():
    checks = run_checks()
    assert [c.name for c in checks if not c.passed] == []


def test_sweep_writes_outputs(tmp_path):
    out = tmp_path / "run"
    assert cli.main(QUICK_SWEEP + ["--out", str(out)]) == 0
    raw = (out / "results.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + 3 * 2 * 3
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["complete"] and manifest["error"] is None
    assert manifest["spec"]["values"] == [-10.0, 0.0, 10.0]
    assert manifest["spec"]["base"]["L"] == 16
    assert manifest["resolved"]["seed"] == 5
    assert set(manifest["trials_per_point"].values()) == {3}


def test_sweep_rerun_from_manifest(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(QUICK_SWEEP + ["--out", str(a)]) == 0
    assert cli.main(["sweep", "--config", str(a / "manifest.json"), "--out", str(b),
                     "--quiet"]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_sweep_threads_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(QUICK_SWEEP + ["--out", str(a), "--threads", "1"]) == 0
    assert cli.main(QUICK_SWEEP + ["--out", str(b), "--threads", "4"]) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_sweep_failure_exit_1_with_partial(tmp_path, monkeypatch):
    real_solve = experiment._solve

    def flaky(config, criterion, opts, trial_index):
        if criterion == "none":
            raise StructuralError("injected")
        return real_solve(config, criterion, opts, trial_index)

    monkeypatch.setattr(experiment, "_solve", flaky)
    out = tmp_path / "run"
    assert cli.main(QUICK_SWEEP + ["--out", str(out)]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["complete"] is False
    assert "injected" in manifest["error"]
    rows = (out / "results.csv").read_text().splitlines()[1:]
    assert rows and all(",er," in row for row in rows)
