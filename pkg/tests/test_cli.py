import csv
import json
import os
from importlib import resources

import jsonschema
import pytest

from cloudalloc.catalog import bundled_catalog, load_catalog
from cloudalloc.cli import main

FIXTURES = resources.files("cloudalloc") / "data" / "fixtures"
AB = str(FIXTURES / "ab_problem.json")


def schema(name):
    return json.loads((resources.files("cloudalloc") / "schemas" / f"{name}.schema.json").read_text())


def check(name, doc):
    jsonschema.Draft202012Validator(schema(name)).validate(doc)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def test_fixtures_match_input_schemas():
    for name in ("s1", "s2", "s3", "s4", "s5"):
        check("scenario", read_json(str(FIXTURES / f"{name}.json")))
    check("problem", read_json(AB))
    check("pools", read_json(str(FIXTURES / "s1.json"))["pools"])


def test_solve_ab(tmp_path):
    out = tmp_path / "solve.json"
    assert main(["solve", "--problem", AB, "--node-budget", "100", "--out", str(out)]) == 0
    doc = read_json(out)
    check("solve_report", doc)
    assert doc["allocation"] == [4, 0]
    assert doc["breakdown"]["total"] == pytest.approx(0.40)
    assert doc["kkt"]["stationarity_norm"] <= 1e-4


def test_solve_csv(tmp_path):
    out = tmp_path / "solve.csv"
    assert main(["solve", "--problem", AB, "--node-budget", "100", "--format", "csv", "--out", str(out)]) == 0
    assert read_csv(out) == [{"provider": "p0", "sku": "A", "count": "4"}]


def test_exit_codes(tmp_path, capsys):
    assert main(["solve", "--problem", str(FIXTURES / "uncoverable_problem.json"), "--out", str(tmp_path / "x")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"]["kind"] == "infeasible" and "uncoverable" in err["error"]["message"]
    assert main(["solve", "--problem", str(tmp_path / "missing.json")]) == 1
    assert not (tmp_path / "x").exists()
    with pytest.raises(SystemExit) as exc:
        main(["solve"])
    assert exc.value.code != 0


def test_param_override(tmp_path):
    out = tmp_path / "s.json"
    assert main(["solve", "--problem", AB, "--alpha", "0.2", "--node-budget", "200", "--out", str(out)]) == 0
    assert read_json(out)["params"]["alpha"] == 0.2


def test_simulate_ca(tmp_path):
    pools = tmp_path / "pools.json"
    pools.write_text(json.dumps([{"provider": "azure", "instance_sku": "g4", "max_nodes": 10}]))
    out = tmp_path / "ca.json"
    assert main(["simulate-ca", "--pools", str(pools), "--demand", "8,16,4,100", "--out", str(out)]) == 0
    doc = read_json(out)
    check("ca_report", doc)
    assert doc["satisfied"]
    # capped pool that cannot reach demand
    pools.write_text(json.dumps([{"provider": "azure", "instance_sku": "g4", "max_nodes": 1}]))
    assert main(["simulate-ca", "--pools", str(pools), "--demand", "8,16,4,100", "--out", str(out)]) == 2
    pools.write_text(json.dumps([{"provider": "azure", "instance_sku": "nope"}]))
    assert main(["simulate-ca", "--pools", str(pools), "--demand", "8,16,4,100", "--out", str(out)]) == 1


def test_compare_builtin(tmp_path):
    out = tmp_path / "cmp.json"
    assert main(["compare", "--builtin", "S1", "--repetitions", "1", "--node-budget", "150",
                 "--out", str(out)]) == 0
    doc = read_json(out)
    check("comparison_report", doc)
    assert doc["optimized"]["total_cost"] <= doc["baseline"]["total_cost"]
    assert (tmp_path / "cmp_radar.png").stat().st_size > 0
    assert main(["compare", "--builtin", "S9", "--out", str(out)]) == 1


@pytest.fixture(scope="module")
def scenarios_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scen")
    code = main(["scenarios", "--out", str(out), "--repetitions", "1", "--scaling-factors", "1,2"])
    return out, code


def test_scenarios_outputs(scenarios_dir):
    out, code = scenarios_dir
    assert code == 0
    names = sorted(os.listdir(out))
    assert [n for n in names if n.startswith("scenario_")] == [f"scenario_S{k}.json" for k in range(1, 6)]
    for k in range(1, 6):
        check("comparison_report", read_json(out / f"scenario_S{k}.json"))
        assert (out / f"radar_S{k}.png").exists()
    rows = read_csv(out / "summary.csv")
    assert len(rows) == 10
    assert {r["strategy"] for r in rows} == {"cluster_autoscaler", "optimizer"}
    check("scenarios_run", read_json(out / "run.json"))
    assert len(read_csv(out / "scaling.csv")) == 2
    assert (out / "cost_comparison.png").exists() and (out / "scaling.png").exists()


def test_sweep_and_pareto(tmp_path):
    table = tmp_path / "sweep.csv"
    assert main(["sweep", "--builtin", "S1", "--grid", "alpha=0,0.05;gamma=0,0.01", "--node-budget", "150",
                 "--starts", "1", "--sensitivity", "0.1", "--out", str(table)]) == 0
    rows = read_csv(table)
    assert len(rows) == 4
    assert [(float(r["alpha"]), float(r["gamma"])) for r in rows] == [(0, 0), (0, 0.01), (0.05, 0), (0.05, 0.01)]
    assert (tmp_path / "sweep_frontier.csv").exists() and (tmp_path / "sweep_frontier.png").exists()
    assert len(read_csv(tmp_path / "sweep_sensitivity.csv")) == 5
    front = tmp_path / "front.csv"
    assert main(["pareto", "--table", str(table), "--out", str(front), "--no-figures"]) == 0
    assert read_csv(front) == read_csv(tmp_path / "sweep_frontier.csv")


def test_kkt_check(tmp_path):
    out = tmp_path / "k.json"
    assert main(["kkt-check", "--problem", AB, "--out", str(out)]) == 0
    doc = read_json(out)
    check("kkt_check", doc)
    assert doc["certified"] and doc["convex"]


def test_synth_catalog(tmp_path):
    out = tmp_path / "cat.csv"
    assert main(["synth-catalog", "--seed", "42", "--n", "36", "--p", "2", "--out", str(out)]) == 0
    assert load_catalog(str(out)) == bundled_catalog()
    js = tmp_path / "cat.json"
    assert main(["synth-catalog", "--n", "5", "--p", "2", "--format", "json", "--out", str(js)]) == 0
    check("catalog", read_json(js))
