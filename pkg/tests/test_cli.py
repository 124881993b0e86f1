import json
import subprocess
import sys

import pytest

from rollupbench import events as ev
from rollupbench.cli import (EXIT_ACCEPTANCE, EXIT_INVALID, EXIT_IO, EXIT_OK,
                             EXIT_SEQUENCER_FAILED, main)


def test_run_then_analyze(tmp_path, capsys):
    log = tmp_path / "events.jsonl"
    assert main(["run", "--out", str(log)]) == EXIT_OK
    records = ev.parse_event_log(log)
    assert sum(r.kind == ev.SENT for r in records) == 1000
    assert sum(r.kind == ev.INCLUDED for r in records) == 1000
    rep = tmp_path / "rep"
    assert main(["analyze", "--log", str(log), "--report", str(rep)]) == EXIT_OK
    first = {p.name: p.read_bytes() for p in rep.iterdir()}
    assert set(first) == {"report.json", "tps.csv", "utilization.csv", "stages.csv"}
    assert main(["analyze", "--log", str(log), "--report", str(rep)]) == EXIT_OK
    assert first == {p.name: p.read_bytes() for p in rep.iterdir()}
    report = json.loads(first["report.json"])
    assert abs(report["final_tps"] - 71.43) <= 71.43 * 0.05


def test_run_with_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"generator.instances": 2, "generator.accounts": 4,
                               "generator.swaps_per_account": 5, "generator.burst_size": 10}))
    log = tmp_path / "e.jsonl"
    assert main(["run", "--config", str(cfg), "--out", str(log)]) == EXIT_OK
    assert sum(r.kind == ev.INCLUDED for r in ev.parse_event_log(log)) == 20


def test_saturating_run_exits_nonzero_with_partial_log(tmp_path):
    cfg = tmp_path / "sat.json"
    cfg.write_text(json.dumps({"generator": {"instances": 6, "accounts": 60, "burst_size": 1200}}))
    log = tmp_path / "e.jsonl"
    assert main(["run", "--config", str(cfg), "--out", str(log)]) == EXIT_SEQUENCER_FAILED
    assert any(r.kind == ev.SEQUENCER_FAILED for r in ev.parse_event_log(log))


def test_error_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"generator.instances": 0}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_INVALID
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["analyze", "--log", str(empty), "--report", str(tmp_path / "r")]) == EXIT_INVALID
    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"kind": "sent", "t": 0.0, "tx_id": "a"}\n{"kind": "sent"\n')
    assert main(["analyze", "--log", str(broken), "--report", str(tmp_path / "r")]) == EXIT_INVALID
    assert main(["analyze", "--log", str(tmp_path / "missing"), "--report",
                 str(tmp_path / "r")]) == EXIT_IO
    assert main(["run", "--out", str(tmp_path / "no" / "such" / "dir" / "e.jsonl")]) == EXIT_IO


def test_repro_matches_run_and_analyze(tmp_path, capsys):
    main(["run", "--out", str(tmp_path / "events.jsonl")])
    main(["analyze", "--log", str(tmp_path / "events.jsonl"), "--report", str(tmp_path / "report")])
    code = main(["repro", "--out", str(tmp_path / "repro")])
    out = capsys.readouterr().out
    assert code in (EXIT_OK, EXIT_ACCEPTANCE)
    assert out.count("PASS") + out.count("FAIL") >= 13
    assert (tmp_path / "repro" / "events.jsonl").read_bytes() == \
        (tmp_path / "events.jsonl").read_bytes()
    for name in ("report.json", "tps.csv", "utilization.csv", "stages.csv"):
        assert (tmp_path / "repro" / "report" / name).read_bytes() == \
            (tmp_path / "report" / name).read_bytes()


def test_repro_time_scale_one(capsys):
    main(["repro", "--time-scale", "1"])
    first = capsys.readouterr().out.splitlines()[0]
    lo, hi = first.split("hard finality ")[1].split("s after")[0].split("-")
    assert 600 <= float(lo) <= float(hi) <= 1200


def test_repro_with_tampered_thresholds(tmp_path, capsys):
    from rollupbench.acceptance import load_thresholds
    th = load_thresholds()
    th["peak_min_tps"] = 10_000
    th["min_miniblock_batch_ratio"] = 100
    path = tmp_path / "th.json"
    path.write_text(json.dumps(th))
    assert main(["repro", "--thresholds", str(path)]) == EXIT_ACCEPTANCE
    out = capsys.readouterr().out
    assert "FAIL   4" in out and "FAIL   9" in out


def test_calibrate_small_grid(capsys):
    assert main(["calibrate", "--bases", "400:450:50", "--alphas", "0:0.05:0.05", "--top", "2"]) == 0
    fits = json.loads(capsys.readouterr().out)
    assert len(fits) == 2 and fits[0]["misses"] <= fits[1]["misses"]
    assert main(["calibrate", "--bases", "nope"]) == EXIT_INVALID


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rollupbench.cli", "run", "--out",
                           str(tmp_path / "e.jsonl")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])
