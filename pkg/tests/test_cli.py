import csv
import json
import subprocess
import sys

import pytest

from jje.analysis import CSV_HEADER
from jje.cli import main


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_analyze(capsys):
    assert main(["analyze", "--corrupted-fraction", "0.35", "--delegation", "18", "--threshold", "12", "--exact"]) == 0
    out = _json(capsys)
    assert out["C"] == 350_000 and out["p_binomial"] < 0.01
    assert "/" in out["p_binomial_exact"]


def test_analyze_invalid_exit_code(capsys):
    assert main(["analyze", "--corrupted-fraction", "0.35", "--delegation", "3", "--threshold", "5"]) == 2
    assert "invalid parameter" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["analyze", "--delegation", "x"])
    assert info.value.code == 2


def test_sweep_to_file(tmp_path):
    out = tmp_path / "fig.csv"
    assert main(["sweep", "--pairs", "18:12,6:4", "--fractions", "0,0.35,1", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert tuple(rows[0]) == CSV_HEADER and len(rows) == 7


def test_search(capsys):
    assert main(["search", "--corrupted-fraction", "0.35", "--target", "0.01", "--max-delegation", "20"]) == 0
    out = _json(capsys)
    assert out["found"] and out["D"] <= 18 and out["p"] <= 0.01
    assert main(["search", "--corrupted-fraction", "0.999", "--target", "1e-9", "--max-delegation", "8"]) == 1


def test_simulate_world(tmp_path, capsys):
    cfg = tmp_path / "world.cfg"
    cfg.write_text("N = 20\nD = 4\nt = 2\nepochs = 2\nseed = 3\n")
    transcript = tmp_path / "t.jsonl"
    assert main(["simulate", "--config", str(cfg), "--dump-headers", "--out", str(transcript)]) == 0
    out = _json(capsys)
    assert [e["epoch"] for e in out["epochs"]] == [0, 1]
    assert all(len(bytes.fromhex(h)) == 113 for h in out["headers"])
    assert all(json.loads(line) for line in transcript.read_text().splitlines())


def test_simulate_monte_carlo(capsys):
    argv = ["simulate", "--devices", "1000", "--corrupted-fraction", "0.35", "--delegation", "18",
            "--threshold", "12", "--trials", "2000", "--seed", "1"]
    assert main(argv) == 0
    out = _json(capsys)
    assert out["trials"] == 2000 and 0 <= out["estimate"] < 0.05


def test_simulate_needs_devices(capsys):
    assert main(["simulate"]) == 2


def test_scenario_verb(tmp_path, capsys):
    assert main(["scenario", "--list"]) == 0
    assert "honest_unlock" in capsys.readouterr().out.split()
    out = tmp_path / "s.jsonl"
    assert main(["scenario", "honest_unlock", "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("PASS")
    assert out.read_text()
    script = tmp_path / "s.txt"
    script.write_text("scenario = lost_delegates_tolerated\nextra_lost = -1\n")
    assert main(["scenario", "--script", str(script)]) == 1
    assert main(["scenario"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "jje", "scenario", "--list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "failsafe" in proc.stdout
