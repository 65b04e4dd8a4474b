import json
import subprocess
import sys

import numpy as np
import pytest

from bridgestop import cli, dp_solver as dp
from bridgestop.priors import Normal, TwoPoint

SMALL_GRID = "0,0.99,60,-6,6,121"


def run_cli(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = cli.main([*argv, "--out", str(out)])
    return code, out


def test_beta_prints_constant(tmp_path, capsys):
    code, out = run_cli(tmp_path, "beta")
    assert code == 0
    assert "0.839923675692" in capsys.readouterr().out
    header, rows = cli.read_csv(out / "beta.csv")
    assert header == ["beta", "residual"]
    assert float(rows[0][0]) == pytest.approx(0.8399236756923727, abs=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"] == ["beta.csv"]
    assert set(manifest["versions"]) >= {"bridgestop", "numpy", "scipy"}


def test_classify_layers_geometry(tmp_path):
    code, out = run_cli(tmp_path, "classify", "--prior", "two_point{r:1,l:-1,p:0.5}", "--grid", SMALL_GRID)
    assert code == 0
    header, rows = cli.read_csv(out / "classify.csv")
    assert header == ["t", "z", "layer", "label"]
    layers = {}
    for t, z, layer, label in rows:
        layers.setdefault(layer, []).append(float(z))
    assert {"Q_r", "C_l", "D_r", "none"} <= set(layers)
    # continuation layers sit below the unknown band, which sits below D_r
    assert max(layers["C_l"]) < min(layers["D_r"])
    assert min(layers["none"]) < min(layers["D_r"])


def test_solve_tables(tmp_path):
    code, out = run_cli(tmp_path, "solve", "--prior", "two_point{r:1,l:-1,p:0.5}", "--grid", SMALL_GRID)
    assert code == 0
    header, rows = cli.read_csv(out / "values.csv")
    assert header == ["t", "z", "v", "gap", "label"]
    assert len(rows) == 60 * 121
    assert {r[4] for r in rows} == {"Stop", "Continue"}
    header, rows = cli.read_csv(out / "boundary.csv")
    assert header == ["t", "level", "kind"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["summary"]["boundary_kind"] == dp.MULTIPLE


def test_boundary_command(tmp_path):
    code, out = run_cli(tmp_path, "boundary", "--prior", "normal{m:0.3,var:0.25}", "--steps", "100")
    assert code == 0
    header, rows = cli.read_csv(out / "boundary.csv")
    assert header == ["t", "b"]
    b = np.array([float(r[1]) for r in rows])
    assert b[-1] == pytest.approx(0.4, abs=5e-3)
    assert np.all(np.diff(b) <= 1e-12)
    summary = json.loads((out / "manifest.json").read_text())["summary"]
    assert summary["iterations"] > 0 and summary["residual"] < 1e-5


def test_simulate_json_record(tmp_path, capsys):
    code, out = run_cli(tmp_path, "simulate", "--prior", "point_mass{r:0}", "--rule", "known-pin",
                        "--paths", "2000", "--steps", "100", "--seed", "3", "--format", "json")
    assert code == 0
    record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert set(record) == {"mean", "std_error", "n_paths", "seed", "rule"}
    assert record["n_paths"] == 2000 and record["seed"] == 3
    table = json.loads((out / "simulate.json").read_text())
    assert table[0]["mean"] == record["mean"]


def test_check_condition_verdicts(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "check-condition", "--prior", "mixture{r:5/9,var:4/9}")
    assert code == 0
    assert capsys.readouterr().out.startswith("Neither worst point")
    code, out = run_cli(tmp_path, "check-condition", "--prior", "mixture{r:1/2,var:1/2}", name="b")
    header, rows = cli.read_csv(out / "condition.csv")
    assert rows[0][header.index("verdict")] == "DecreasingEverywhere"


def test_rerun_reproduces_bytes(tmp_path):
    code, first = run_cli(tmp_path, "simulate", "--prior", "two_point{r:1,l:-1,p:0.5}", "--rule", "level:0.5",
                          "--paths", "3000", "--steps", "50", "--seed", "9")
    assert code == 0
    second = tmp_path / "again"
    assert cli.main(["rerun", str(first / "manifest.json"), "--out", str(second)]) == 0
    assert (first / "simulate.csv").read_bytes() == (second / "simulate.csv").read_bytes()


def test_run_config_round_trip():
    cfg = cli.RunConfig("solve", TwoPoint(1.0, -1.0, 0.5), cli.parse_grid(SMALL_GRID), "x", 4, "json",
                        {"terminal": "stopnow"})
    again = cli.RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    with pytest.raises(cli.ConfigError):
        cli.RunConfig("plot")


def test_grid_flag_parsing():
    g = cli.parse_grid("0.1,0.999,100,-3,3,61")
    assert (g.t0, g.n_t, g.z_min, g.z_max, g.n_z) == (0.1, 100, -3.0, 3.0, 61)
    assert g.t1 == pytest.approx(0.999)
    with pytest.raises(cli.ConfigError):
        cli.parse_grid("0,1,2")


def test_prior_from_file(tmp_path):
    path = tmp_path / "prior.json"
    path.write_text(json.dumps({"type": "normal", "m": 0.0, "var": 0.5}))
    assert cli.load_prior(str(path)) == Normal(0.0, 0.5)


def test_csv_and_json_tables_agree():
    rows = [(0.1, 1 / 3, "Stop"), (0.2, float("inf"), "Continue")]
    text = cli.table_text(["t", "v", "label"], rows, "csv")
    assert text.splitlines()[1] == "0.1,0.333333333333,Stop"
    records = json.loads(cli.table_text(["t", "v", "label"], rows, "json"))
    assert records[0]["v"] == 0.333333333333 and records[1]["v"] is None


@pytest.mark.parametrize("argv,code", [
    (["classify"], 2),
    (["classify", "--prior", "cauchy{x:1}"], 2),
    (["solve", "--prior", "two_point{r:1,l:-1,p:0.5}", "--grid", "0,0.99,50,-1,1,21"], 2),
    (["boundary", "--prior", "two_point{r:1,l:-1,p:0.5}"], 2),
    (["simulate", "--prior", "point_mass{r:0}", "--rule", "magic"], 2),
    (["boundary", "--prior", "normal{m:0,var:0.5}", "--tol", "1e-14", "--steps", "60"], 3),
])
def test_error_exit_codes(tmp_path, capsys, argv, code):
    assert cli.main([*argv, "--out", str(tmp_path / "err")]) == code
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == code and err["error"] and err["message"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "bridgestop", "beta", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "beta = 0.8399" in proc.stdout
