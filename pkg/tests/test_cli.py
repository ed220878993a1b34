import argparse
import json
import subprocess
import sys

import pytest

from markupclear.cli import EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_OK, EXIT_USAGE, UsageError, main, resolve_config
from markupclear.metrics import reports_from_csv, reports_from_json
from markupclear.synthetic import example_path


def _events(err):
    return [json.loads(line) for line in err.splitlines() if line.startswith("{")]


def test_opt_example1(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = main(["clear", "--scenario", str(example_path("example1")), "--mode", "opt", "--out", str(out)])
    assert code == EXIT_OK
    (rep,) = reports_from_csv(out.read_text())
    assert rep.algorithm == "OPT" and rep.scenario == "example1"
    assert rep.welfare == pytest.approx(-30.0)
    assert rep.mwps == rep.budget_deficit
    events = {e["event"] for e in _events(capsys.readouterr().err)}
    assert {"scenario", "opt-solve", "report"} <= events


def test_example2_distance_logged(capsys):
    code = main(["clear", "--scenario", "example:example2", "--mode", "markup-threshold", "--balance", "weak",
                 "--auctioneer-demand", "5", "--alpha-set", "1", "--allow-alpha-ge-1", "--delta-set", "0.8",
                 "--jobs", "1"])
    captured = capsys.readouterr()
    trials = [e for e in _events(captured.err) if e["event"] == "delta-trial"]
    assert trials[0]["delta"] == 0.8
    assert trials[0]["distance"] == pytest.approx(7.28, abs=5e-3)
    # seller 2 needs 182 and the markup only raises 50, so the run reports a budget failure
    assert code == EXIT_INFEASIBLE
    (rep,) = reports_from_csv(captured.out)
    assert rep.status == "budget"


def test_missing_scenario_file(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = main(["clear", "--scenario", str(tmp_path / "nope.json"), "--out", str(out)])
    assert code == EXIT_USAGE
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []
    assert "cannot load scenario" in capsys.readouterr().err


def test_infeasible_run_writes_row(tmp_path):
    out = tmp_path / "r.json"
    code = main(["clear", "--scenario", "example:example3", "--balance", "weak", "--auctioneer-demand", "500",
                 "--alpha-set", "0,0.01,0.1", "--out", str(out), "--format", "json"])
    assert code == EXIT_INFEASIBLE
    (rep,) = reports_from_json(out.read_text())
    assert rep.status == "infeasible" and rep.welfare is None


def test_ip_price_mode_writes_prices(tmp_path):
    prices = tmp_path / "p.csv"
    code = main(["clear", "--scenario", "example:example3", "--mode", "ip-price", "--prices-out", str(prices),
                 "--out", str(tmp_path / "r.csv")])
    assert code == EXIT_OK
    lines = prices.read_text().splitlines()
    assert lines[0] == "node,period,price" and len(lines) == 4
    (rep,) = reports_from_csv((tmp_path / "r.csv").read_text())
    assert rep.algorithm == "IP Price"


def test_time_limit_exit_code(capsys):
    code = main(["clear", "--scenario", "synthetic:random", "--seed", "19", "--mode", "opt", "--time-limit",
                 "1e-9"])
    assert code == EXIT_LIMIT
    (rep,) = reports_from_csv(capsys.readouterr().out)
    assert rep.status == "limit"


def test_usage_errors(capsys):
    assert main(["clear", "--scenario", "example:example1", "--auctioneer-demand", "5"]) == EXIT_USAGE
    assert main(["clear", "--scenario", "example:example1", "--mode", "opt", "--delta-set", "0.5"]) == EXIT_USAGE
    assert main(["clear", "--scenario", "example:example1", "--alpha-set", "0.5,0.1"]) == EXIT_USAGE
    assert main(["clear", "--mode", "nonsense"]) == EXIT_USAGE
    assert main(["clear"]) == EXIT_USAGE
    assert main(["clear", "--scenario", "example:nope"]) == EXIT_USAGE


def test_env_override(monkeypatch):
    ns = argparse.Namespace(scenario="example:example1", mode=None, balance="strict", alpha_set=None,
                            delta_set=None, auctioneer_demand=None, oversupply_cap=None, allow_alpha_ge_1=None,
                            seed=None, time_limit=None, gap=None, out=None, format=None, jobs=None)
    env = {"MARKUP_MODE": "opt", "MARKUP_BALANCE": "weak", "MARKUP_TIME_LIMIT": "60", "MARKUP_JOBS": "2"}
    cfg = resolve_config(ns, env)
    assert cfg.mode == "opt" and cfg.time_limit == 60.0 and cfg.jobs == 2
    assert cfg.balance == "strict"  # explicit flag wins
    with pytest.raises(UsageError, match="MARKUP_SEED"):
        resolve_config(ns, {"MARKUP_SEED": "x"})


def test_env_override_end_to_end(monkeypatch, capsys):
    monkeypatch.setenv("MARKUP_MODE", "opt")
    assert main(["clear", "--scenario", "example:example1"]) == EXIT_OK
    (rep,) = reports_from_csv(capsys.readouterr().out)
    assert rep.algorithm == "OPT"


def test_extend_deterministic(tmp_path):
    prof = tmp_path / "prof.csv"
    from markupclear.synthetic import sample_profiles
    p = sample_profiles()
    prof.write_text("hour,wind,solar\n" + "".join(f"{h + 1},{w},{s}\n" for h, (w, s) in enumerate(zip(p.wind, p.solar))))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    src = str(example_path("example3"))
    assert main(["extend", "--input", src, "--profiles", str(prof), "--seed", "42", "--out", str(a)]) == EXIT_OK
    assert main(["extend", "--input", src, "--profiles", str(prof), "--seed", "42", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    assert json.loads(a.read_text())["horizon"] == 24
    # a 24-period input is rejected
    c = tmp_path / "c.json"
    assert main(["extend", "--input", str(a), "--profiles", str(prof), "--seed", "1", "--out", str(c)]) == EXIT_USAGE
    assert not c.exists()
    short = tmp_path / "short.csv"
    short.write_text("\n".join(prof.read_text().splitlines()[:-1]) + "\n")
    assert main(["extend", "--input", src, "--profiles", str(short), "--seed", "1", "--out", str(c)]) == EXIT_USAGE


def test_extend_horizon_message(tmp_path, capsys):
    from markupclear.scenario import extend_to_multiperiod, save_scenario
    from markupclear.synthetic import example, sample_profiles
    long = tmp_path / "long.json"
    save_scenario(extend_to_multiperiod(example("example1"), sample_profiles(), 0), long)
    prof = tmp_path / "prof.csv"
    p = sample_profiles()
    prof.write_text("hour,wind,solar\n" + "".join(f"{h + 1},{w},{s}\n" for h, (w, s) in enumerate(zip(p.wind, p.solar))))
    main(["extend", "--input", str(long), "--profiles", str(prof), "--seed", "1", "--out", str(tmp_path / "x")])
    assert "horizon must be 1" in capsys.readouterr().err


def test_report_merges_and_fills_rwl(tmp_path, capsys):
    runs = tmp_path / "runs.csv"
    assert main(["clear", "--scenario", "example:example1", "--mode", "opt", "--out", str(runs)]) == EXIT_OK
    assert main(["clear", "--scenario", "example:example1", "--balance", "weak", "--auctioneer-demand", "5",
                 "--alpha-set", "1", "--allow-alpha-ge-1", "--out", str(runs)]) == EXIT_OK
    other = tmp_path / "other.json"
    assert main(["clear", "--scenario", "example:example3", "--mode", "opt", "--out", str(other),
                 "--format", "json"]) == EXIT_OK
    capsys.readouterr()
    assert main(["report", str(runs), str(other)]) == EXIT_OK
    table = capsys.readouterr().out.splitlines()
    assert table[0].startswith("| Algorithm | S=D | Welfare")
    assert "| **example:example1** |" in table[2]
    assert any(row.startswith("| Threshold |") and "6.67%" in row and "(40.00)" in row for row in table)
    assert any("**example:example3**" in row for row in table)
    assert sum(row.startswith("| OPT |") for row in table) == 2


def test_report_single_and_bad_version(tmp_path, capsys):
    runs = tmp_path / "r.json"
    main(["clear", "--scenario", "example:example1", "--mode", "opt", "--out", str(runs), "--format", "json"])
    capsys.readouterr()
    assert main(["report", str(runs)]) == EXIT_OK
    rows = [r for r in capsys.readouterr().out.splitlines() if r.startswith("| OPT")]
    assert len(rows) == 1
    doc = json.loads(runs.read_text())
    doc[0]["schema_version"] = 7
    runs.write_text(json.dumps(doc))
    assert main(["report", str(runs)]) == EXIT_USAGE


def test_console_script_entry():
    res = subprocess.run([sys.executable, "-m", "markupclear.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip().endswith("0.1.0")
