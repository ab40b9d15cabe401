# Scenario files, result files and the command-line entry point.
import json
import tempfile
from pathlib import Path

from mulgpmp import load_scenario, run_joint, save_scenario, write_result
from mulgpmp.cli import main

here = Path(__file__).resolve().parent.parent / "scenarios"
scenario = load_scenario(here / "formation5.json")
print(scenario.name, scenario.n_agents, "agents, weights", scenario.weights)

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    save_scenario(scenario, tmp / "copy.json")
    print("round trip equal:", load_scenario(tmp / "copy.json") == scenario)

    written = write_result(run_joint(scenario), tmp / "api")
    print("files:", [p.name for p in written])

    # same thing through the CLI, with an override
    code = main(["solve", "--scenario", str(here / "formation5.json"), "--method", "joint",
                 "--out", str(tmp / "cli"), "--set", "sigma_mul=0.5"])
    print("exit code", code)
    print(json.loads((tmp / "cli" / "result.json").read_text())["iterations"], "iterations")
