import json
import os
import subprocess
import sys

import pytest

from netinf_mn.errors import SimulationAbort
from netinf_mn.scenario import shipped_scenarios
from netinf_mn.scenario.cli import EXIT_ABORT, EXIT_BUDGET, EXIT_OK, EXIT_SCENARIO, main

FIG2 = str(shipped_scenarios()["fig2"])
ROAM = str(shipped_scenarios()["roaming5"])


def test_validate_ok(capsys):
    assert main(["validate", FIG2]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_validate_reports_position(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text(open(FIG2).read().replace("home EN1", "home EN9", 1))
    assert main(["validate", str(bad)]) == EXIT_SCENARIO
    err = capsys.readouterr().err
    assert "expected declared edge network" in err and "'EN9'" in err


def test_validate_empty_and_missing_files(tmp_path, capsys):
    empty = tmp_path / "empty.scn"
    empty.write_text("")
    assert main(["validate", str(empty)]) == EXIT_SCENARIO
    assert main(["validate", str(tmp_path / "nope.scn")]) == EXIT_SCENARIO
    assert capsys.readouterr().err.count("error:") == 2


def test_run_prints_report_to_stdout(capsys):
    assert main(["run", FIG2, "--seed", "1"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["run"]["seed"] == 1
    assert rep["global"]["map_requests"] == 1


def test_run_writes_files(tmp_path, capsys):
    rep, tr = tmp_path / "r.json", tmp_path / "t.txt"
    assert main(["run", FIG2, "--seed", "1", "--report", str(rep), "--trace", str(tr)]) == EXIT_OK
    assert "core_msgs=" in capsys.readouterr().out
    assert json.loads(rep.read_text())["scenario"]["name"] == "fig2"
    assert tr.read_text().startswith("t=0 ")


def test_run_policy_flag(capsys):
    main(["run", ROAM, "--update-policy", "eager"])
    assert json.loads(capsys.readouterr().out)["policy"] == "eager"


def test_sweep(tmp_path, capsys):
    assert main(["sweep", FIG2, "--seeds", "1..3", "--out", str(tmp_path)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert [l.split()[0] for l in lines] == ["seed=1", "seed=2", "seed=3"]
    assert sorted(p.name for p in tmp_path.iterdir()) == [f"fig2-seed{i}.json" for i in (1, 2, 3)]


def test_sweep_parallel_matches_serial(tmp_path, capsys):
    main(["sweep", ROAM, "--seeds", "1..4"])
    serial = capsys.readouterr().out
    main(["sweep", ROAM, "--seeds", "1..4", "--parallel", "2"])
    assert capsys.readouterr().out == serial


def test_bad_seed_range_is_a_usage_error():
    with pytest.raises(SystemExit):
        main(["sweep", FIG2, "--seeds", "5..1"])


@pytest.fixture
def reports(tmp_path):
    paths = {}
    for policy in ("lazy", "eager"):
        p = tmp_path / f"{policy}.json"
        main(["run", ROAM, "--update-policy", policy, "--report", str(p)])
        paths[policy] = str(p)
    other = tmp_path / "fig2.json"
    main(["run", FIG2, "--report", str(other)])
    paths["fig2"] = str(other)
    return paths


def test_compare_within_budget(reports, capsys):
    capsys.readouterr()
    assert main(["compare", reports["lazy"], reports["eager"], "--keys", "core_msgs",
                 "--budget", "core_msgs=5"]) == EXIT_OK
    assert "+5" in capsys.readouterr().out


def test_compare_over_budget(reports, capsys):
    assert main(["compare", reports["lazy"], reports["eager"], "--keys", "core_msgs",
                 "--budget", "core_msgs=4"]) == EXIT_BUDGET
    assert "regression: core_msgs" in capsys.readouterr().out


def test_compare_refusals(reports, tmp_path):
    assert main(["compare", reports["lazy"], reports["fig2"], "--keys", "core_msgs"]) == EXIT_SCENARIO
    assert main(["compare", reports["lazy"], reports["eager"], "--keys", "no_such_key"]) == EXIT_SCENARIO
    junk = tmp_path / "junk.json"
    junk.write_text("{")
    assert main(["compare", str(junk), reports["eager"], "--keys", "core_msgs"]) == EXIT_SCENARIO


def test_runtime_abort_exit_code(monkeypatch, capsys):
    import netinf_mn.scenario.cli as cli

    def boom(*a, **k):
        raise SimulationAbort("forced")

    monkeypatch.setattr(cli, "run_scenario", boom)
    assert main(["run", FIG2]) == EXIT_ABORT
    assert "abort: forced" in capsys.readouterr().err


def _run_module(args, hashseed):
    env = dict(os.environ, PYTHONHASHSEED=str(hashseed))
    env.pop("NETINF_SIM_SEED", None)
    return subprocess.run([sys.executable, "-m", "netinf_mn", *args], capture_output=True, text=True, env=env,
                          check=False)


def test_module_entry_point_and_hash_seed_independence(tmp_path):
    outs = []
    for hs in (0, 12345):
        tr = tmp_path / f"t{hs}.txt"
        done = _run_module(["run", ROAM, "--seed", "3", "--trace", str(tr)], hs)
        assert done.returncode == 0, done.stderr
        outs.append((done.stdout, tr.read_text()))
    assert outs[0] == outs[1]
