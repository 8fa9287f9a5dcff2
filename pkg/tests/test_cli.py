"""End-to-end command-line behavior: exit codes, headers, determinism."""

import json

import pytest

from swiptctl.cli import main
from swiptctl.scenario import desk_scenario


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "cfg.json"
    path.write_text(desk_scenario(calib_draws=80, q_max=4, e_max=3).to_json())
    return str(path)


def run(*argv):
    return main(list(argv))


def test_validate_ok(cfg_file, capsys):
    assert run("validate", "--config", cfg_file) == 0
    out = capsys.readouterr().out
    assert out.startswith("ok ")
    assert "states" in out


def test_malformed_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n"q_max": \n}')
    assert run("validate", "--config", str(bad)) == 2
    assert "line" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert run("validate", "--config", str(tmp_path / "nope.json")) == 2


def test_solve_output_has_hash_header_and_is_deterministic(cfg_file,
                                                           tmp_path):
    scenario_hash = desk_scenario(calib_draws=80, q_max=4, e_max=3).scenario_hash()
    outs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        log = tmp_path / (name + ".log")
        assert run("solve", "--config", cfg_file, "--kind", "d-opt",
                   "--out", str(out), "--log", str(log),
                   "--max-iterations", "4") == 0
        assert out.read_text().splitlines()[0] == f"# scenario {scenario_hash}"
        assert log.read_text().startswith(f"# scenario {scenario_hash}")
        outs.append((out.read_bytes(), log.read_bytes()))
    assert outs[0] == outs[1]


def test_evaluate_round_trip(cfg_file, tmp_path):
    pol = tmp_path / "pol.json"
    res = tmp_path / "res.json"
    assert run("solve", "--config", cfg_file, "--kind", "d-opt",
               "--out", str(pol), "--max-iterations", "4") == 0
    assert run("evaluate", "--config", cfg_file, "--policy", str(pol),
               "--out", str(res), "--episodes", "3", "--horizon", "40") == 0
    body = json.loads("".join(ln for ln in res.read_text().splitlines()
                              if not ln.startswith("#")))
    assert body["scenario_hash"] == desk_scenario(
        calib_draws=80, q_max=4, e_max=3).scenario_hash()
    assert body["episodes"] == 3
    assert body["delay_ms_mean"] >= 0.0


def test_evaluate_refuses_foreign_policy(cfg_file, tmp_path, capsys):
    other = tmp_path / "other.json"
    other.write_text(desk_scenario(calib_draws=81, q_max=4, e_max=3).to_json())
    pol = tmp_path / "pol.json"
    assert run("solve", "--config", str(other), "--kind", "d-opt",
               "--out", str(pol), "--max-iterations", "2") == 0
    res = tmp_path / "res.json"
    assert run("evaluate", "--config", cfg_file, "--policy", str(pol),
               "--out", str(res), "--episodes", "2",
               "--horizon", "10") == 2
    assert "hash" in capsys.readouterr().err
    assert not res.exists()


def test_require_convergence_exits_3(cfg_file, tmp_path, capsys):
    out = tmp_path / "pol.json"
    assert run("solve", "--config", cfg_file, "--kind", "j-opt",
               "--out", str(out), "--eps", "1e-9", "--max-iterations", "1",
               "--require-convergence") == 3
    assert "budget" in capsys.readouterr().err


def test_sweep_power_csv(cfg_file, tmp_path):
    out = tmp_path / "sweep.csv"
    assert run("sweep-power", "--config", cfg_file, "--budgets", "10.0",
               "--policies", "p-opt", "--out", str(out),
               "--episodes", "2", "--horizon", "30") == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# scenario ")
    assert lines[1].split(",")[0] == "scenario_hash"
    assert len(lines) == 3


def test_sweep_power_rejects_unknown_policy(cfg_file, tmp_path, capsys):
    assert run("sweep-power", "--config", cfg_file, "--budgets", "1.0",
               "--policies", "q-opt", "--out", str(tmp_path / "x.csv")) == 2
    assert "q-opt" in capsys.readouterr().err


def test_sweep_antennas_csv(cfg_file, tmp_path):
    out = tmp_path / "ant.csv"
    assert run("sweep-antennas", "--config", cfg_file, "--n-r", "4",
               "--out", str(out), "--episodes", "2", "--horizon", "30",
               "--max-iterations", "2") == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# scenario ")
    header = lines[1].split(",")
    assert header[-2:] == ["effective_power_w", "effective_power_ci"]
    assert len(lines) == 4          # header + select + full rows
