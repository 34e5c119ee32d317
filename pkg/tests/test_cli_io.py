import json
import math

import numpy as np
import pytest

from richfit import cli, io
from richfit.diffusion import SamplePaths
from richfit.errors import ValidationError
from richfit.growth import Perturbation, RichardsParams, evaluate_modified, switch_time

from conftest import STUDY


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_ingest_wide_single_path(tmp_path):
    sp = io.ingest_csv(write(tmp_path / "a.csv", "year,twh\n1958,100\n1959,130\n1960,171.5\n"), "wide")
    assert sp.d == 1 and sp.counts == [3]
    np.testing.assert_array_equal(sp.values[0], [100, 130, 171.5])


def test_ingest_long_and_round_trip(tmp_path):
    grid = np.round(np.arange(51) * 0.2, 10)
    mat = np.exp(np.random.default_rng(0).normal(size=(25, 51)))
    sp = SamplePaths.from_grid(grid, mat)
    for layout in io.LAYOUTS:
        f = io.write_paths_csv(sp, tmp_path / f"{layout}.csv", layout)
        back = io.ingest_csv(f, layout)
        assert back.d == 25 and set(back.counts) == {51}
        np.testing.assert_array_equal(back.matrix(), mat)
        np.testing.assert_array_equal(back.grid(), grid)


@pytest.mark.parametrize("text, fragment", [
    ("t,x\n0,1\n1,0\n", "row 3, column 'x'"),
    ("t,x\n0,1\n1,abc\n", "not a number"),
    ("t,x\n0,1\n0,2\n", "strictly increasing"),
    ("t,x\n0,1\n1\n", "expected 2 cells"),
    ("t,x\n", "at least one data row"),
])
def test_ingest_errors_name_the_cell(tmp_path, text, fragment):
    with pytest.raises(ValidationError, match=fragment):
        io.ingest_csv(write(tmp_path / "bad.csv", text), "wide")


def test_ingest_long_errors(tmp_path):
    with pytest.raises(ValidationError, match="row 3"):
        io.ingest_csv(write(tmp_path / "l.csv", "path_id,time,value\na,1,2\na,0.5,3\n"), "long")
    with pytest.raises(ValidationError):
        io.ingest_csv(write(tmp_path / "l.csv", "id,time\na,1\n"), "long")
    with pytest.raises(ValidationError):
        io.ingest_csv(tmp_path / "missing.csv", "long")
    with pytest.raises(ValidationError):
        io.ingest_csv(tmp_path / "missing.csv", "diagonal")


def test_fmt_round_trips_doubles():
    for x in (0.1, 1 / 3, math.pi * 1e-300, 2.0 ** 0.5 * 1e300, 4.47556799551372):
        assert float(io.fmt(x)) == x


def test_json_schema_version_and_nonfinite(tmp_path):
    f = io.write_json(tmp_path / "r.json", {"a": math.inf, "b": np.float64(1.5), "c": np.arange(2)}, "test")
    doc = json.loads(f.read_text())
    assert doc["schema_version"] == io.SCHEMA_VERSION and doc["a"] is None and doc["c"] == [0, 1]
    assert io.read_json(f)["b"] == 1.5
    write(tmp_path / "old.json", '{"schema_version": "0"}')
    with pytest.raises(ValidationError):
        io.read_json(tmp_path / "old.json")


def test_config_flattening_and_unknown_keys(tmp_path):
    cfg = write(tmp_path / "c.toml", 'seed = 4\n[model]\nq = 1.5\nsigma = 0.02\n[fit]\np = [0.3, 0.5]\n')
    out = cli.build_config(str(cfg), {"seed": None})
    assert out["seed"] == 4 and out["model.q"] == 1.5 and out["fit.p"] == [0.3, 0.5]
    assert cli.build_config(str(cfg), {"seed": 9})["seed"] == 9
    write(tmp_path / "bad.toml", "[model]\nqq = 1\n")
    with pytest.raises(ValidationError, match="model.qq"):
        cli.build_config(str(tmp_path / "bad.toml"), {})
    write(tmp_path / "broken.toml", "[model\n")
    with pytest.raises(ValidationError):
        cli.build_config(str(tmp_path / "broken.toml"), {})


def test_parse_p():
    assert cli.parse_p("0.5") == 0.5
    assert cli.parse_p(0.5) == 0.5
    assert cli.parse_p("0.3,0.5,0.7") == [0.3, 0.5, 0.7]
    assert cli.parse_p([0.3]) == [0.3]
    for bad in ("x", "-1", "", "0.3,,-2"):
        with pytest.raises(ValidationError):
            cli.parse_p(bad)


def test_curve_command(tmp_path):
    assert cli.main(["curve", "--out", str(tmp_path)]) == 0
    diag = json.loads((tmp_path / "curve.json").read_text())
    assert diag["t_inflection"] == pytest.approx(3.32193, abs=1e-5)
    assert diag["mu"] == pytest.approx(14.79, abs=0.01) and diag["lambda_lag"] == pytest.approx(1.16, abs=0.01)
    write(tmp_path / "none.toml", '[perturbation]\nkind = "none"\n')
    assert cli.main(["curve", "--config", str(tmp_path / "none.toml"), "--out", str(tmp_path / "n")]) == 0
    rows = np.loadtxt(tmp_path / "n" / "curve.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(rows[:, 1], rows[:, 2])


def test_simulate_command_bytes_and_tiny_sigma(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["simulate", "--out", str(tmp_path / d), "--seed", "5"]) == 0
    for name in ("paths.csv", "metadata.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    sp = io.ingest_csv(tmp_path / "a" / "paths.csv", "long")
    assert sp.d == 25 and set(sp.counts) == {101}
    np.testing.assert_allclose(sp.grid(), np.arange(101) * 0.1, atol=1e-12)
    write(tmp_path / "s.toml", "[model]\nsigma = 1e-12\n[simulate]\nn_paths = 2\nlayout = \"wide\"\n")
    assert cli.main(["simulate", "--config", str(tmp_path / "s.toml"), "--out", str(tmp_path / "c")]) == 0
    sp = io.ingest_csv(tmp_path / "c" / "paths.csv", "wide")
    p = RichardsParams(**STUDY)
    curve = evaluate_modified(p, Perturbation.power(1.0, switch_time(p, 0.5)), sp.grid())
    np.testing.assert_allclose(sp.matrix(), np.tile(curve, (2, 1)), rtol=1e-8)


def test_exit_codes(tmp_path, capsys):
    write(tmp_path / "bad.toml", "[model]\nk = 1.5\n")
    assert cli.main(["curve", "--config", str(tmp_path / "bad.toml"), "--out", str(tmp_path)]) == 2
    assert cli.main(["fit", "--out", str(tmp_path)]) == 2
    blocked = write(tmp_path / "file", "")
    assert cli.main(["curve", "--out", str(blocked / "sub")]) == 2
    write(tmp_path / "far.toml", "[fpt]\nboundary = 70.0\nn_paths = 2000\n[grid]\nt_end = 5.0\n")
    assert cli.main(["fpt", "--config", str(tmp_path / "far.toml"), "--out", str(tmp_path / "f")]) == 3
    assert "boundary rarely reached" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["curve", "--method", "nope"])
    assert exc.value.code == 2


def test_fpt_command(tmp_path, capsys):
    assert cli.main(["fpt", "--deterministic", "--p", "0.5"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(4.475568, abs=1e-6)
    write(tmp_path / "f.toml", '[perturbation]\nkind = "none"\n[fpt]\nn_paths = 20000\n')
    assert cli.main(["fpt", "--config", str(tmp_path / "f.toml"), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "fpt_summary.json").read_text())
    assert doc["boundary"] == pytest.approx(48.0)
    assert doc["sup_gap_relative"] < 0.05
    assert doc["summaries"]["integral_equation"]["mean"] == pytest.approx(4.479, abs=0.01)
    header = (tmp_path / "fpt_density.csv").read_text().splitlines()[0]
    assert header == "method,time,density"


def test_fit_command_and_report_driven_fpt(tmp_path, capsys):
    assert cli.main(["simulate", "--out", str(tmp_path / "sim"), "--seed", "1"]) == 0
    write(tmp_path / "fit.toml", "[fit]\nsubsample = 2\nbudget = 20000\nfpt_paths = 20000\n")
    args = ["fit", str(tmp_path / "sim" / "paths.csv"), "--config", str(tmp_path / "fit.toml"),
            "--replications", "2", "--p", "0.3,0.5,0.7", "--out", str(tmp_path / "fit")]
    assert cli.main(args) == 0
    rep = json.loads((tmp_path / "fit" / "report.json").read_text())
    assert rep["schema_version"] == io.SCHEMA_VERSION and rep["p"] == 0.5
    assert set(rep["candidates"]) == {"0.3", "0.5", "0.7"}
    assert rep["t_star"]["deterministic"] == pytest.approx(4.4756, abs=0.05)
    assert rep["t_star"]["fpt"]["mean"] > 4
    assert rep["rae_mean"] < 0.01
    c_hat = np.loadtxt(tmp_path / "fit" / "c_hat.csv", delimiter=",", skiprows=1)
    assert c_hat[0, 1] == 0 and np.all(c_hat[:, 1] >= 0)
    assert "RAE" in (tmp_path / "fit" / "summary.txt").read_text()
    assert cli.main(["fpt", "--config", str(tmp_path / "fit.toml"), "--out", str(tmp_path / "fpt"),
                     "--seed", "3"]) == 0
    write(tmp_path / "r.toml", f'[fpt]\nreport = "{tmp_path / "fit" / "report.json"}"\nn_paths = 20000\n')
    assert cli.main(["fpt", "--config", str(tmp_path / "r.toml"), "--out", str(tmp_path / "fpt2")]) == 0
    doc = json.loads((tmp_path / "fpt2" / "fpt_summary.json").read_text())
    assert doc["p"] == 0.5 and "integral_equation" in doc["summaries"]


def test_fit_without_post_switch_data(tmp_path, capsys):
    assert cli.main(["simulate", "--out", str(tmp_path / "sim"), "--seed", "1"]) == 0
    sp = io.ingest_csv(tmp_path / "sim" / "paths.csv", "long").restrict(4.7)
    io.write_paths_csv(sp, tmp_path / "short.csv", "long")
    assert cli.main(["fit", str(tmp_path / "short.csv"), "--replications", "1", "--out", str(tmp_path / "o"),
                     "--window-end", "4.0"]) == 2
    assert "cannot estimate C" in capsys.readouterr().err
