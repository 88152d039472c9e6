import csv
import io
import json

import pytest

from rvvtune.cli import run_cli


def _write(tmp_path, data, name="w.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


QMM = {"name": "qmm", "ops": [{"kind": "matmul", "m": 4, "n": 64, "k": 64, "dtype": "int8"}],
       "tuner": {"trials": 24, "seed": 1}}


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_registry_listing(capsys):
    assert run_cli(["registry", "--vlen", "1024", "--dtype", "float32"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert {int(r["vl"]) for r in rows} == {256, 128, 64, 32, 16, 8, 4}
    assert {r["j"] for r in rows if r["kind"] == "multivmul"} == {"32", "1"}


def test_tune_then_eval_round_trip(tmp_path, capsys):
    wl = _write(tmp_path, QMM)
    out = tmp_path / "out"
    assert run_cli(["tune", wl, "--out", str(out)]) == 0
    for f in ("results.csv", "results_summary.txt", "history.csv", "trace.csv", "schedule.json"):
        assert (out / f).exists(), f
    assert len(list(out.glob("qmm_*.c"))) == 1
    results = _csv((out / "results.csv").read_text())
    tuned = next(r for r in results if r["type"] == "tuned-RVV")
    history = _csv((out / "history.csv").read_text())
    assert len(history) == 24 and history[0]["op"]
    capsys.readouterr()
    assert run_cli(["eval", wl, "--schedule", str(out / "schedule.json")]) == 0
    assert f": {tuned['latency_cycles']} cycles" in capsys.readouterr().out


def test_codegen_from_saved_schedule(tmp_path, capsys):
    wl = _write(tmp_path, QMM)
    assert run_cli(["tune", wl, "--out", str(tmp_path / "o")]) == 0
    capsys.readouterr()
    assert run_cli(["codegen", wl, "--schedule", str(tmp_path / "o" / "schedule.json"),
                    "--out", str(tmp_path / "c")]) == 0
    (path,) = capsys.readouterr().out.split()
    assert open(path).read() == next((tmp_path / "o").glob("*.c")).read_text()


def test_trace_store_share_tuned_vs_rowstore(tmp_path, capsys):
    wl = _write(tmp_path, {"name": "t", "ops": [{"kind": "matmul", "m": 64, "n": 64, "k": 64,
                                                  "dtype": "int8"}], "tuner": {"trials": 30}})
    assert run_cli(["trace", wl, "--type", "rowstore"]) == 0
    rs = _csv(capsys.readouterr().out)[0]
    assert run_cli(["trace", wl, "--type", "tuned"]) == 0
    tu = _csv(capsys.readouterr().out)[0]
    assert float(tu["rvv_store_perc"]) < 1.0 < float(rs["rvv_store_perc"])


def test_trace_skips_ops_without_rowstore(tmp_path, capsys):
    wl = _write(tmp_path, {"name": "m", "ops": [{"kind": "macc", "n": 64, "dtype": "float32"}]})
    assert run_cli(["trace", wl, "--type", "rowstore"]) == 1
    assert run_cli(["trace", wl, "--type", "scalar", "--out", str(tmp_path)]) == 0
    assert _csv((tmp_path / "trace.csv").read_text())[0]["type"] == "non-tuned"


def test_small_matmul_picks_single_row_variant(tmp_path, capsys):
    wl = _write(tmp_path, {"name": "s", "ops": [{"kind": "matmul", "m": 16, "n": 16, "k": 16,
                                                  "dtype": "int8"}], "tuner": {"trials": 30}})
    assert run_cli(["tune", wl, "--out", str(tmp_path / "o")]) == 0
    summary = (tmp_path / "o" / "results_summary.txt").read_text()
    assert "_j1" in summary.split("\n")[0]


@pytest.mark.parametrize("argv, code", [
    (["frobnicate"], 1),
    (["registry"], 1),
    (["registry", "--dtype", "int8", "--vlen", "300"], 1),
    (["tune", "/nonexistent/w.json"], 1),
])
def test_exit_codes(argv, code, capsys):
    assert run_cli(argv) == code
    assert capsys.readouterr().err


def test_invalid_workload_and_schedule(tmp_path, capsys):
    bad = _write(tmp_path, {"name": "b", "ops": [{"kind": "matmul", "dtype": "int8"}], "machine": {"vlen": 300}})
    assert run_cli(["tune", bad]) == 1
    assert "$." in capsys.readouterr().err
    wl = _write(tmp_path, QMM, "ok.json")
    sched = _write(tmp_path, {"format": 1, "ops": []}, "s.json")
    assert run_cli(["eval", wl, "--schedule", sched]) == 1
    assert run_cli(["--help"]) == 0


def test_internal_error_exit_code(monkeypatch, tmp_path):
    import rvvtune.cli as cli
    monkeypatch.setitem(cli._COMMANDS, "registry", lambda args: 1 / 0)
    assert run_cli(["registry", "--dtype", "int8"]) == 2
