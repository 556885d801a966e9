import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from robinmc.cli import CONFIG_SCHEMA, EXIT_CONFIG, EXIT_OK, EXIT_SCIENCE, OUTPUT_ENV, load_config, main
from robinmc.errors import ConfigError
from robinmc.experiments import CHECK_HEADER, ESTIMATE_HEADER, SLACK_HEADER, config_hash

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
CHEAP = ["interval_generator", "halfline_localtime"]


def _write(tmp_path, cfg, name="cfg"):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(cfg))
    return p


def _header(path):
    with open(path) as fh:
        return tuple(next(csv.reader(fh)))


def test_every_shipped_config_validates():
    for p in sorted(CONFIGS.glob("*.json")):
        load_config(p)


def test_unknown_key_is_rejected_with_its_name(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "interval_generator.json").read_text())
    cfg["params"]["bogus_knob"] = 1
    code = main(["run", str(_write(tmp_path, cfg)), "-o", str(tmp_path / "out")])
    assert code == EXIT_CONFIG
    assert "bogus_knob" in capsys.readouterr().err


def test_top_level_unknown_key(tmp_path):
    cfg = json.loads((CONFIGS / "interval_generator.json").read_text())
    cfg["colour"] = "blue"
    with pytest.raises(ConfigError, match="colour"):
        load_config(_write(tmp_path, cfg))


def test_malformed_json_is_a_config_error(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["run", str(p), "-o", str(tmp_path)]) == EXIT_CONFIG


def test_unsupported_experiment_domain_pair_is_a_config_error(tmp_path):
    cfg = json.loads((CONFIGS / "interval_generator.json").read_text())
    cfg["domain"] = {"kind": "halfline"}
    assert main(["run", str(_write(tmp_path, cfg)), "-o", str(tmp_path / "out")]) == EXIT_CONFIG


def test_run_writes_expected_files_and_headers(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "halfline_localtime.json"), "-o", str(out)]) == EXIT_OK
    d = out / "halfline_localtime"
    assert _header(d / "estimates.csv") == ESTIMATE_HEADER
    assert _header(d / "slack.csv") == SLACK_HEADER
    assert _header(d / "checks.csv") == CHECK_HEADER
    summary = json.loads((d / "summary.json").read_text())
    assert summary["passed"] and summary["config_hash"] == config_hash(load_config(CONFIGS / "halfline_localtime.json"))


def test_determinism_and_worker_independence(tmp_path):
    paths = [str(CONFIGS / f"{c}.json") for c in CHEAP]
    assert main(["run", *paths, "-o", str(tmp_path / "a"), "-w", "1"]) == EXIT_OK
    assert main(["run", *paths, "-o", str(tmp_path / "b"), "-w", "3"]) == EXIT_OK
    for c in CHEAP:
        for name in ("estimates.csv", "slack.csv", "checks.csv"):
            assert (tmp_path / "a" / c / name).read_bytes() == (tmp_path / "b" / c / name).read_bytes()


def test_worker_override_without_mc_block_keeps_the_hash():
    cfg = load_config(CONFIGS / "interval_generator.json")
    h = config_hash(cfg)
    cfg.setdefault("mc", {})["n_workers"] = 3
    assert config_hash(cfg) == h


def test_worker_count_does_not_enter_the_hash():
    cfg = load_config(CONFIGS / "halfline_localtime.json")
    h = config_hash(cfg)
    cfg["mc"]["n_workers"] = 7
    cfg["output_dir"] = "/elsewhere"
    assert config_hash(cfg) == h
    cfg["mc"]["seed"] += 1
    assert config_hash(cfg) != h


def test_hsu_run_produces_slack_rows(tmp_path):
    assert main(["run", str(CONFIGS / "annulus_hsu.json"), "-o", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "annulus_hsu" / "slack.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert all(r["inequality_id"].startswith("gradient_bound[") for r in rows)
    assert all(float(r["slack"]) + float(r["error_budget"]) >= 0 for r in rows)


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = json.loads((CONFIGS / "interval_generator.json").read_text())
    p = _write(tmp_path, cfg, "gen")
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["run", str(p)]) == EXIT_OK
    assert (tmp_path / "env" / "gen" / "checks.csv").is_file()
    cfg["output_dir"] = str(tmp_path / "cfgdir")
    p = _write(tmp_path, cfg, "gen")
    assert main(["run", str(p)]) == EXIT_OK
    assert (tmp_path / "cfgdir" / "gen" / "checks.csv").is_file()
    assert main(["run", str(p), "-o", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "gen" / "checks.csv").is_file()


def test_report_on_empty_directory(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == ",".join(CHECK_HEADER)


def test_report_on_missing_directory(tmp_path):
    assert main(["report", str(tmp_path / "nope")]) == EXIT_CONFIG


def test_report_flags_failures(tmp_path, capsys):
    assert main(["run", str(CONFIGS / "interval_generator.json"), "-o", str(tmp_path)]) == EXIT_OK
    summary = tmp_path / "interval_generator" / "summary.json"
    data = json.loads(summary.read_text())
    data["checks"][0].update(passed=False, margin=-1.0)
    summary.write_text(json.dumps(data))
    capsys.readouterr()
    assert main(["report", str(tmp_path), "--detail"]) == EXIT_SCIENCE
    assert ",fail," in capsys.readouterr().out


def test_report_on_corrupt_summary(tmp_path):
    (tmp_path / "run").mkdir()
    (tmp_path / "run" / "summary.json").write_text("[]")
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG


def test_report_golden_row_and_csv(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "interval_generator.json"), "-o", str(out)]) == EXIT_OK
    golden = tmp_path / "golden"
    shutil.copytree(CONFIGS / "golden" / "interval_generator", golden / "interval_generator")
    code = main(["report", str(out), "--golden", str(golden), "-o", str(tmp_path / "report.csv")])
    assert code == EXIT_OK
    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["experiment"] for r in rows] == ["generator", "golden_reproduction"]
    assert all(r["passed"] == "pass" for r in rows)
    (golden / "interval_generator" / "checks.csv").write_text("tampered\n")
    assert main(["report", str(out), "--golden", str(golden)]) == EXIT_SCIENCE


def test_list_and_schema(capsys):
    assert main(["list"]) == EXIT_OK
    listed = capsys.readouterr().out
    for name in ("local_time_mean", "bismut_gradient", "hwi", "generator"):
        assert name in listed
    assert main(["schema"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out) == CONFIG_SCHEMA


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "robinmc.cli", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "hwi" in proc.stdout
