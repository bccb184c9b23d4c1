import csv
import json

import pytest

from pactight.cli import main


def test_instrument_prints_program(capsys, tmp_path):
    assert main(["instrument", "running_example", "--ret", "none"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("(instrumented cpi)") and "pct_rm_tag" in out
    dst = tmp_path / "x.ir"
    assert main(["instrument", "running_example", "-o", str(dst)]) == 0
    assert "pct_auth" in dst.read_text()


def test_json_stdout_is_pure(capsys):
    assert main(["stats", "c01_arith", "--json", "-"]) == 0
    cap = capsys.readouterr()
    assert len(json.loads(cap.out)) == 3 and "program" in cap.err


def test_instrument_json(capsys):
    code = main(["instrument", "c05_void_cast", "--json", "-"])
    d = json.loads(capsys.readouterr().out)
    assert code == 0 and d["stats"]["pct_sign"] == 4 and d["unresolved_universal"] == []


def test_run_clean_and_json(capsys):
    code = main(["run", "c09_recursion", "--json", "-"])
    out = capsys.readouterr().out
    d = json.loads(out)
    assert code == 0 and d["verdict"] == "CLEAN" and d["outputs"] == [720]


def test_run_instrumented_file(tmp_path, capsys):
    dst = tmp_path / "r.ir"
    main(["instrument", "running_example", "-o", str(dst)])
    assert main(["run", str(dst)]) == 0
    assert "CLEAN" in capsys.readouterr().out


def test_run_aborting_program_exits_1(capsys):
    assert main(["run", "array_bounds"]) == 1
    assert "MissingTag" in capsys.readouterr().out


def test_scenarios_list_and_run(capsys):
    assert main(["scenarios"]) == 0
    assert "noncopy" in capsys.readouterr().out
    code = main(["scenarios", "noncopy", "ret_swap", "--json", "-"])
    out = capsys.readouterr().out
    rows = json.loads(out)
    assert code == 0 and all(r["ok"] for r in rows)
    got = {(r["scenario"], r["mode"]): r["verdict"] for r in rows}
    assert got[("noncopy", "parts_typeid")] == "ATTACK_SUCCEEDED"
    assert got[("ret_swap", "pactight")] == "ATTACK_BLOCKED"


def test_experiment_forge(capsys):
    code = main(["experiment", "forge", "--trials", "5000", "--pac-bits", "2", "--json", "-"])
    out = capsys.readouterr().out
    d = json.loads(out)
    assert code == 0 and d["trials"] == 5000 and d["expected"] == 0.25


def test_experiment_copy_includes_fixture(capsys):
    code = main(["experiment", "copy", "--trials", "2000", "--pac-bits", "2", "--json", "-"])
    out = capsys.readouterr().out
    d = json.loads(out)
    assert code == 0 and d["collision_fixture"]["rate"] == 1.0


def test_stats_monotone(capsys):
    code = main(["stats", "--json", "-"])
    out = capsys.readouterr().out
    rows = json.loads(out)
    assert code == 0 and len(rows) == 30 and all(r["monotone"] for r in rows)


def test_config_file_sets_defaults(tmp_path, capsys):
    cfg = tmp_path / "c.conf"
    cfg.write_text("# defaults\ntrials = 3000\npac_bits = 1\n")
    code = main(["--config", str(cfg), "experiment", "forge", "--json", "-"])
    out = capsys.readouterr().out
    d = json.loads(out)
    assert code == 0 and d["trials"] == 3000 and d["pac_bits"] == 1


@pytest.mark.parametrize("argv", [
    ["run", "no_such_program.ir"],
    ["scenarios", "nope"],
    ["experiment", "forge", "--trials", "0"],
    ["instrument", "running_example", "--level", "full"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.conf"
    cfg.write_text("colour = blue\n")
    assert main(["--config", str(cfg), "stats"]) == 2


def test_json_to_file(tmp_path, capsys):
    dst = tmp_path / "s.json"
    assert main(["scenarios", "coop", "--mode", "pactight", "--json", str(dst)]) == 0
    assert json.loads(dst.read_text())[0]["verdict"] == "ATTACK_BLOCKED"


@pytest.mark.slow
def test_report_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "rep"
    code = main(["report", "--out", str(out), "--trials", "2000", "--iterations", "300"])
    names = {p.name for p in out.iterdir()}
    assert {"experiments.csv", "scenarios.csv", "stats.csv", "report.json", "acceptance.png",
            "scenarios.png", "store_lookup.png", "op_costs.png"} <= names
    rows = list(csv.DictReader(open(out / "experiments.csv")))
    assert len(rows) == 12
    assert code == 0
