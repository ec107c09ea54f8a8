import json

import pytest
import yaml

from auditrepair.cli import main
from auditrepair.data import load_csv
from auditrepair.harness import REPORT_FILES


@pytest.fixture
def synth_yaml(tmp_path):
    path = tmp_path / "synth.yaml"
    path.write_text(yaml.safe_dump({"n_records": 1500, "discrimination_delta": 0.05, "seed": 4}))
    return path


@pytest.fixture
def fast_yaml(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"forest": {"n_estimators": 8}}))
    return path


def test_generate_writes_csv(tmp_path, synth_yaml, capsys):
    out = tmp_path / "d.csv"
    assert main(["generate", "--config", str(synth_yaml), "--out", str(out)]) == 0
    assert len(load_csv(out)) == 1500
    assert "wrote 1500 records" in capsys.readouterr().out


def test_generate_default_replica_counts(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path / "t2.csv")]) == 0
    text = capsys.readouterr().out
    assert "/13401" in text and "/25532" in text


def test_run_writes_reports(tmp_path, synth_yaml, fast_yaml, capsys):
    out = tmp_path / "rep"
    code = main(["run", "--synth-config", str(synth_yaml), "--config", str(fast_yaml),
                 "--k-folds", "2", "--setting", "BR", "--setting", "EBR", "--out", str(out)])
    assert code == 0
    assert sorted(p.name for p in out.iterdir()) == sorted(REPORT_FILES)
    assert main(["report", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "BR" in printed and "FPRD" in printed


def test_rq1_splits_reports_per_model(tmp_path, synth_yaml, tmp_path_factory):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text(yaml.safe_dump({"forest": {"n_estimators": 5},
                                   "mlp": {"hidden": [4], "epochs": 1}}))
    out = tmp_path / "rq1"
    assert main(["rq1", "--synth-config", str(synth_yaml), "--config", str(cfg),
                 "--k-folds", "2", "--out", str(out)]) == 0
    assert (out / "forest" / "aggregate.json").exists()
    assert (out / "mlp" / "aggregate.json").exists()


def test_rq4_single_level(tmp_path, synth_yaml, fast_yaml):
    out = tmp_path / "rq4"
    assert main(["rq4", "--synth-config", str(synth_yaml), "--config", str(fast_yaml),
                 "--k-folds", "2", "--level", "0.4", "--out", str(out)]) == 0
    body = json.loads((out / "forest" / "aggregate.json").read_text())
    assert {a["x_value"] for a in body["aggregates"]} == {0.4}


def test_config_error_exits_1(tmp_path, synth_yaml, capsys):
    assert main(["run", "--synth-config", str(synth_yaml), "--budget", "1.5",
                 "--out", str(tmp_path)]) == 1
    assert "budget_rate" in capsys.readouterr().err


def test_unknown_option_exits_1(capsys):
    assert main(["run", "--no-such-flag"]) == 1


def test_report_without_aggregate_exits_1(tmp_path):
    assert main(["report", str(tmp_path)]) == 1


def test_data_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("callback\n1\n")
    assert main(["run", "--data", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "missing required column" in capsys.readouterr().err


def test_missing_data_file_exits_2(tmp_path):
    assert main(["run", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2


def test_infeasible_exits_3(tmp_path, synth_yaml, fast_yaml, capsys):
    code = main(["rq3", "--synth-config", str(synth_yaml), "--config", str(fast_yaml),
                 "--k-folds", "2", "--target-gap", "0.99", "--out", str(tmp_path)])
    assert code == 3
    assert "error:" in capsys.readouterr().err
