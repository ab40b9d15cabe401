import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mulgpmp.cli import main, pareto_mask
from mulgpmp.environment import save_map
from mulgpmp.io import load_scenario, render_svg, save_scenario, scenario_from_dict
from mulgpmp.scenarios import Agent, Scenario, hallway_grid, hallway_scenario, run_joint

SOLO = {"agents": [{"start": [0, 0], "goal": [10, 0], "radius": 1}], "map": None, "t_total": 10, "N": 9,
        "n_p": 9, "eps_obs": 2, "sigma_obs": 0.3, "eps_mul": 15, "sigma_mul": 0.7, "qc": 1, "init": "line"}


def write(path, data):
    path.write_text(json.dumps(data))
    return path


def test_scenario_round_trip(tmp_path):
    sc = hallway_scenario(name="hall")
    first = tmp_path / "hall.json"
    save_scenario(sc, first)
    loaded = load_scenario(first)
    second = tmp_path / "again.json"
    save_scenario(loaded, second)
    again = load_scenario(second)
    assert loaded == again
    assert loaded.grid == sc.grid and loaded.weights == sc.weights and loaded.agents == sc.agents
    data = json.loads(first.read_text())
    assert data["map"] == "hall.map" and data["init"] == "astar"


def test_scenario_parse_errors(tmp_path):
    with pytest.raises(ValueError):
        scenario_from_dict({"agents": [{"start": [0, 0]}]})
    with pytest.raises(ValueError):
        scenario_from_dict({**SOLO, "colour": "red"})
    with pytest.raises(ValueError):
        scenario_from_dict({**SOLO, "N": 2.5})


def test_solve_single_agent(tmp_path, capsys):
    f = write(tmp_path / "solo.json", SOLO)
    code = main(["solve", "--scenario", str(f), "--method", "joint", "--out", str(tmp_path / "out")])
    assert code == 0
    with open(tmp_path / "out" / "agent_0.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x", "y", "vx", "vy"] and len(rows) - 1 == 91
    assert float(rows[-1][0]) == 10.0 and float(rows[-1][1]) == 10.0
    result = json.loads((tmp_path / "out" / "result.json").read_text())
    assert result["success"] is True and result["method"] == "joint"
    assert (tmp_path / "out" / "trajectories.svg").read_text().startswith("<svg")


def test_solve_validation_error_exit_code(tmp_path, capsys):
    bad = {**SOLO, "agents": [{"start": [0, 0], "goal": [5, 0], "radius": 1},
                              {"start": [0, 0], "goal": [0, 5], "radius": 1}]}
    f = write(tmp_path / "bad.json", bad)
    assert main(["solve", "--scenario", str(f), "--method", "joint", "--out", str(tmp_path / "o")]) == 1
    assert "apart" in capsys.readouterr().err
    assert main(["solve", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 1
    (tmp_path / "junk.json").write_text("{not json")
    assert main(["solve", "--scenario", str(tmp_path / "junk.json"), "--out", str(tmp_path / "o")]) == 1


def test_solve_unsuccessful_exit_code(tmp_path):
    # the hallway with straight-line init gets stuck against the wall
    sc = hallway_scenario(init="line")
    f = tmp_path / "hall_line.json"
    save_scenario(sc, f)
    assert main(["solve", "--scenario", str(f), "--method", "joint", "--out", str(tmp_path / "o")]) == 2


def test_solve_overrides(tmp_path):
    f = write(tmp_path / "solo.json", SOLO)
    out = tmp_path / "o"
    code = main(["solve", "--scenario", str(f), "--out", str(out), "--set", "N=4", "--set", "n_p=4",
                 "--set", "max_iterations=3", "--set", "eps_obs=1.0"])
    assert code == 0
    result = json.loads((out / "result.json").read_text())
    assert len(result["support"][0]) == 5 and len(result["times"]) == 21
    assert main(["solve", "--scenario", str(f), "--out", str(out), "--set", "bogus=1"]) == 1
    assert main(["solve", "--scenario", str(f), "--out", str(out), "--set", "N"]) == 1


def test_hallway_solve_passes_through_corridor(tmp_path):
    sc = hallway_scenario()
    f = tmp_path / "hall.json"
    save_scenario(sc, f)
    out = tmp_path / "o"
    assert main(["solve", "--scenario", str(f), "--method", "joint", "--out", str(out)]) == 0
    result = json.loads((out / "result.json").read_text())
    traj = np.array(result["trajectories"])
    grid = hallway_grid()
    x_mid = (grid.extent[0] + grid.extent[2]) / 2
    for path in traj:
        k = np.argmin(np.abs(path[:, 0] - x_mid))
        assert abs(path[k, 0] - x_mid) < 1.5
        assert not grid.occupied_at(path[k, :2])
    svg = (out / "trajectories.svg").read_text()
    assert svg.count("<polyline") == 2 and svg.count("<circle") == 2


def test_svg_is_deterministic(tmp_path):
    sc = scenario_from_dict(SOLO)
    res = run_joint(sc)
    a = render_svg(sc, res.trajectories)
    b = render_svg(sc, np.array(res.trajectories))
    assert a == b
    f = write(tmp_path / "solo.json", SOLO)
    main(["solve", "--scenario", str(f), "--out", str(tmp_path / "o1")])
    main(["solve", "--scenario", str(f), "--out", str(tmp_path / "o2")])
    assert (tmp_path / "o1" / "trajectories.svg").read_bytes() == (tmp_path / "o2" / "trajectories.svg").read_bytes()
    assert main(["render", "--scenario", str(f), "--result", str(tmp_path / "o1" / "result.json"),
                 "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "trajectories.svg").read_bytes() == (tmp_path / "o1" / "trajectories.svg").read_bytes()


def test_svg_transform_uniform_and_flipped():
    sc = Scenario(agents=[Agent((0, 0), (10, 0))], grid=None)
    traj = np.zeros((1, 2, 4))
    traj[0, 1, :2] = [10, 0]
    svg = render_svg(sc, traj, size=1000)
    # world y grows upward, so higher points get smaller SVG y
    sc2 = Scenario(agents=[Agent((0, 0), (0, 10))])
    traj2 = np.zeros((1, 2, 4))
    traj2[0, 1, :2] = [0, 10]
    svg2 = render_svg(sc2, traj2, size=1000)
    pts = svg2.split('points="')[1].split('"')[0].split()
    (x0, y0), (x1, y1) = [tuple(map(float, p.split(","))) for p in pts]
    assert y1 < y0 and x0 == x1
    pts = svg.split('points="')[1].split('"')[0].split()
    (a0, _), (a1, _) = [tuple(map(float, p.split(","))) for p in pts]
    assert math.isclose(a1 - a0, y0 - y1, rel_tol=1e-3)


def test_benchmark_joint_only(tmp_path):
    out = tmp_path / "bench"
    assert main(["benchmark", "--out", str(out), "--jobs", "2", "--methods", "joint"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["results"]) == 150
    assert {r["method"] for r in report["rows"]} == {"joint"}
    table = (out / "table.txt").read_text()
    assert "sequential" not in table and len(table.strip().splitlines()) == 2 + 3
    for row in report["rows"]:
        recount = [r for r in report["results"] if r["n"] == row["n"] and r["method"] == row["method"]]
        assert row["problems"] == len(recount)
        assert row["success_pct"] == 100.0 * sum(r["success"] for r in recount) / len(recount)
    assert main(["benchmark", "--out", str(out), "--methods", "astar"]) == 1


def test_gridsearch(tmp_path):
    f = write(tmp_path / "solo.json", SOLO)
    grid = write(tmp_path / "grid.json", {"eps_obs": [1.0, 2.0], "sigma_obs": [0.3], "eps_mul": [10, 15, 20],
                                          "sigma_mul": [0.7, 1.0]})
    out = tmp_path / "gs"
    assert main(["gridsearch", "--scenario", str(f), "--grid", str(grid), "--out", str(out)]) == 0
    with open(out / "gridsearch.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 1 * 3 * 2
    assert any(r["pareto"] == "True" for r in rows)
    empty = write(tmp_path / "empty.json", {"eps_obs": []})
    assert main(["gridsearch", "--scenario", str(f), "--grid", str(empty), "--out", str(out)]) == 1
    assert main(["gridsearch", "--scenario", str(f), "--grid", str(write(tmp_path / "e2.json", {})),
                 "--out", str(out)]) == 1


def test_gridsearch_degenerate_matches_solve(tmp_path):
    from mulgpmp.scenarios import formation_permutations

    sc = formation_permutations(4)[3]
    f = tmp_path / "f4.json"
    save_scenario(sc, f)
    grid = write(tmp_path / "grid.json", {"eps_obs": [2.0], "sigma_obs": [0.3], "eps_mul": [15.0],
                                          "sigma_mul": [0.7]})
    assert main(["gridsearch", "--scenario", str(f), "--grid", str(grid), "--out", str(tmp_path / "gs")]) == 0
    assert main(["solve", "--scenario", str(f), "--out", str(tmp_path / "s")]) == 0
    with open(tmp_path / "gs" / "gridsearch.csv") as fh:
        (row,) = list(csv.DictReader(fh))
    solved = json.loads((tmp_path / "s" / "result.json").read_text())
    assert row["success"] == "True" and solved["success"]
    assert float(row["smoothness"]) == pytest.approx(solved["smoothness"], rel=1e-12)


def test_pareto_mask():
    rows = [
        {"success": True, "smoothness": 1.0, "time_ms": 5.0},
        {"success": True, "smoothness": 2.0, "time_ms": 6.0},
        {"success": False, "smoothness": 0.5, "time_ms": 1.0},
        {"success": True, "smoothness": 0.9, "time_ms": 9.0},
    ]
    assert pareto_mask(rows) == [True, False, True, True]


def test_planner_seed_and_module_entry(tmp_path, monkeypatch):
    f = write(tmp_path / "solo.json", SOLO)
    monkeypatch.setenv("PLANNER_SEED", "7")
    assert main(["solve", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 0
    monkeypatch.setenv("PLANNER_SEED", "seven")
    assert main(["solve", "--scenario", str(f), "--out", str(tmp_path / "o")]) == 1
    monkeypatch.setenv("PLANNER_SEED", "3")
    proc = subprocess.run([sys.executable, "-m", "mulgpmp", "solve", "--scenario", str(f), "--out",
                           str(tmp_path / "o3")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
