import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from cfdmux.cli import main

ROOT = Path(__file__).resolve().parents[1]
SCEN = ROOT / "scenarios"


def test_gen_and_analyze(tmp_path, capsys):
    traces = tmp_path / "traces"
    assert main(["gen-traces", "--out", str(traces), "--iterations", "100"]) == 0
    assert len(list(traces.glob("rank_*.csv"))) == 16
    out = tmp_path / "report"
    assert main(["analyze", str(traces), "--out", str(out)]) == 0
    doc = json.loads((out / "duty_report.json").read_text())
    assert doc["groups"]["dense"] == pytest.approx(0.194, abs=1e-3)
    assert 0.83 <= doc["reclaimable"]["equal"]["fraction_of_budget"] <= 0.91
    text = capsys.readouterr().out
    assert "[groups]" in text and "sparse" in text


def test_analyze_empty_dir(tmp_path):
    assert main(["analyze", str(tmp_path), "--out", str(tmp_path / "o")]) == 2


def test_analyze_bad_trace(tmp_path):
    (tmp_path / "rank_0000.csv").write_text("rank,call,t_enter_us,t_exit_us\n0,Bcast,1,2\n")
    assert main(["analyze", str(tmp_path), "--out", str(tmp_path / "o")]) == 2


def test_plan_reference(tmp_path, capsys):
    assert main(["plan", "--weights", "reference", "--sims", "5", "--out", str(tmp_path), "--manifests"]) == 0
    doc = json.loads((tmp_path / "plan.json").read_text())
    assert doc["total_millicpu"] == 5896
    assert doc["aggregate"]["total_millicpu"] == 29480
    assert "30.7%" in capsys.readouterr().out
    assert (tmp_path / "manifests" / "e" / "of-worker-e-15.manifest").is_file()


def test_plan_budget_violation():
    assert main(["plan", "--weights", "1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1", "--budget", "100"]) == 3


def test_plan_over_capacity():
    assert main(["plan", "--budget", "60000", "--sims", "2"]) == 3


def test_plan_from_duties(tmp_path, capsys):
    traces, rep = tmp_path / "t", tmp_path / "r"
    main(["gen-traces", "--out", str(traces), "--iterations", "50"])
    main(["analyze", str(traces), "--out", str(rep)])
    capsys.readouterr()
    assert main(["plan", "--duties-from", str(rep / "duty_report.json")]) == 0
    assert "180" in capsys.readouterr().out


def test_predict(tmp_path, capsys):
    assert main(["predict", str(SCEN / "reference_points.csv"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "model.json").read_text())
    assert doc["fits"]["n2_only"]["beta"] == pytest.approx(0.773, abs=0.005)
    assert doc["knee"] == 3
    with open(tmp_path / "pareto.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[1]["throughput"]) == pytest.approx(1.77, abs=0.01)
    assert (tmp_path / "cost.csv").is_file()
    assert "knee: N=3" in capsys.readouterr().out


def test_predict_missing(tmp_path):
    assert main(["predict", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 2


def test_predict_bad_row(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("N,makespan\n1,abc\n")
    assert main(["predict", str(p), "--out", str(tmp_path)]) == 2


def test_simulate(tmp_path):
    assert main(["simulate", str(SCEN / "colocate_n2_compact.yaml"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "result.json").read_text())
    assert 0 < doc["inflation"] < 0.30
    assert doc["fairness_ratio"] <= 1.10
    assert (tmp_path / "utilization.csv").read_text().startswith("t,node0,node1")


def test_simulate_bad_yaml(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text("jobs: [")
    assert main(["simulate", str(p), "--out", str(tmp_path)]) == 2


def test_control(tmp_path, capsys):
    assert main(["control", str(SCEN / "controller_default.yaml"), "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["counters"]["resize"] == 64 and m["counters"]["deploy"] == 3
    assert len((tmp_path / "actions.jsonl").read_text().splitlines()) == sum(m["counters"].values())
    assert "resizes 64" in capsys.readouterr().out


def test_control_unknown_key(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("config: {bogus: 1}\n")
    assert main(["control", str(p), "--out", str(tmp_path)]) == 2


def test_emit(capsys):
    assert main(["emit", "pod", "--sim", "A", "--rank", "0", "--cpu", "67"]) == 0
    assert capsys.readouterr().out == (ROOT / "tests" / "golden" / "of-worker-a-0.manifest").read_text()
    assert main(["emit", "mpirun"]) == 0
    assert "--mca btl tcp,self" in capsys.readouterr().out
    assert main(["emit", "resize", "--sim", "A", "--rank", "3", "--cpu", "179"]) == 0
    assert '"cpu":"179m"' in capsys.readouterr().out
    assert main(["emit", "hostfile", "--ips", "10.0.0.1"]) == 0
    assert "10.0.0.1 slots=1" in capsys.readouterr().out


def test_emit_errors():
    assert main(["emit", "pod", "--cpu", "5"]) == 2
    assert main(["emit", "hostfile"]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "cfdmux", "emit", "mpirun", "--ranks", "4"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 0
    assert "-np 4" in r.stdout
