import json

import numpy as np
import pytest

from geopriv.cli import main
from geopriv.experiment import bundled_checkins_path, read_rows
from geopriv.grid import GeoGrid
from geopriv.mechanism import DiscreteMechanism


@pytest.fixture
def grid_json(tmp_path):
    path = tmp_path / "grid.json"
    path.write_text(json.dumps(GeoGrid(10.0, 5.0, 2, 1).to_config()))
    return str(path)


def run(argv, capsys):
    code = main(argv)
    return code, capsys.readouterr()


def test_sample(tmp_path, capsys):
    code, out = run(["sample", "--epsilon", "1", "--seed", "42"], capsys)
    assert code == 0
    header, line = out.out.strip().splitlines()
    assert header == "x_km,y_km,magnitude_km,angle_rad"
    assert line.split(",")[2:] == ["0.7945374209886522", "5.15345695161544"]


def test_eval_loss(capsys):
    code, out = run(["eval-loss", "--laplace", "3"], capsys)
    assert code == 0
    assert json.loads(out.out)["expected_loss"] == pytest.approx(2 / 3)


def test_check_privacy_radial(capsys):
    assert run(["check-privacy", "--laplace", "1", "--ell", "linear:1"], capsys)[0] == 0
    assert run(["check-privacy", "--laplace", "1", "--ell", "linear:0.5"], capsys)[0] == 1


def test_check_privacy_mechanism(tmp_path, grid_json, capsys):
    DiscreteMechanism.identity(2).to_csv(tmp_path / "k.csv")
    code, out = run(["check-privacy", "--mechanism", str(tmp_path / "k.csv"), "--grid", grid_json,
                     "--ell", "linear:1"], capsys)
    assert code == 1 and json.loads(out.out)["holds"] is False


def test_build_and_solve_lp(tmp_path, grid_json, capsys):
    code, out = run(["build-lp", "--grid", grid_json, "--ell", "linear:0.3", "--out", str(tmp_path / "m.lp")], capsys)
    assert code == 0 and json.loads(out.out)["inequalities"] == 4
    code, out = run(["solve-lp", "--grid", grid_json, "--ell", "linear:0.3", "--out", str(tmp_path / "k.csv")], capsys)
    assert code == 0
    assert json.loads(out.out)["objective"] == pytest.approx(5 / (1 + np.exp(1.5)), abs=1e-9)
    assert DiscreteMechanism.from_csv(tmp_path / "k.csv").shape == (2, 2)


def test_prior(tmp_path, capsys):
    grid = tmp_path / "g.json"
    grid.write_text(json.dumps({"lat_min": 33.9301, "lat_max": 34.0650, "lon_min": -118.5354,
                                "lon_max": -118.3185, "cols": 4, "rows": 3}))
    code, out = run(["prior", "--checkins", str(bundled_checkins_path()), "--grid", str(grid),
                     "--user", "1042", "--out", str(tmp_path / "p.csv"), "--stats", str(tmp_path / "s.json")], capsys)
    assert code == 0
    stats = json.loads((tmp_path / "s.json").read_text())
    assert stats["in_region"] + stats["dropped"] == stats["total"]


def test_sweep_and_report(tmp_path, capsys):
    out_dir = tmp_path / "res"
    code, _ = run(["sweep", "--epsilon-start", "2.9", "--users", "1042", "--out-dir", str(out_dir)], capsys)
    assert code == 0
    rows = read_rows(out_dir / "sweep.csv")
    assert [r["epsilon"] for r in rows] == ["2.9", "3.0"]
    code, _ = run(["report", "--input", str(out_dir / "sweep.csv"), "--out-dir", str(out_dir)], capsys)
    assert code == 0 and (out_dir / "summary.json").exists()


def test_remap_eval(tmp_path, capsys):
    code, _ = run(["remap-eval", "--epsilon-start", "3.0", "--grid", "2x2", "--users", "1042",
                   "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    [row] = read_rows(tmp_path / "remap.csv")
    assert float(row["bayes_loss_km"]) <= float(row["nearest_loss_km"]) + 1e-9


@pytest.mark.parametrize("argv", [
    ["check-privacy", "--laplace", "1", "--ell", "cubic:1"],
    ["eval-loss", "--laplace", "1", "--loss", "quadratic"],
    ["sweep", "--config", "/nonexistent/config.json"],
    ["sweep", "--grid", "0x3"],
    ["sample", "--epsilon", "-1"],
    ["prior", "--checkins", "/nonexistent.txt", "--grid", "/nonexistent.json", "--user", "1", "--out", "x"],
])
def test_config_errors_exit_2(argv, capsys):
    assert run(argv, capsys)[0] == 2
