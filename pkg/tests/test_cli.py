import json
from pathlib import Path

import numpy as np
import pytest

from ebe.acceptance import DATASETS
from ebe.cli import RunConfig, UsageError, main, parse_grid, parse_schedule
from ebe.geometry import read_field

DATA = Path(__file__).resolve().parent.parent / "data"
SMALL = "solve,n=17"


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def _json(out):
    return json.loads(out[out.index("{"):])


def test_run_config_round_trip():
    cfg = RunConfig(data="x.json", grid={"L": 4.0, "n2": 17}, schedule=[1.0, 0.0], tol=1e-6, out="o", seed=3)
    assert RunConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(UsageError):
        RunConfig.from_json('{"bogus": 1}')


def test_parse_grid():
    assert parse_grid("solve,n=17") == {"L": 4, "y_min": 0.25, "n2": 17, "n3": 17, "ny": 17}
    assert parse_grid("L=2,ny=9") == {"L": 2.0, "ny": 9}
    for bad in ("nope", "L=abc", "z=1", "L=2,solve"):
        with pytest.raises(UsageError):
            parse_grid(bad)


def test_parse_schedule():
    assert parse_schedule("default") is None
    assert parse_schedule("steps=2") == [1.0, 0.5, 0.25, 0.0]
    assert parse_schedule("1,0.5,0") == [1.0, 0.5, 0.0]
    for bad in ("1,1,0", "0.5,0.6,0", "1,0.5", "a,b"):
        with pytest.raises(UsageError):
            parse_schedule(bad)


@pytest.mark.parametrize("name", sorted(DATASETS))
def test_shipped_data_files_match_the_datasets(name):
    raw = json.loads((DATA / f"{name}.json").read_text())
    assert [raw[k] for k in "PQR"] == [list(v) for v in DATASETS[name]]


def test_charges_command(capsys):
    code, out = run(capsys, "charges", str(DATA / "z_one_z.json"))
    rep = _json(out)
    assert code == 0 and rep["charges"]["K"] == 3
    assert [p["charge"] for p in rep["charges"]["points"]] == [3]


def test_model_command_k0(capsys, tmp_path):
    code, out = run(capsys, "model", "--k", "0", "--grid", "L=2,y_min=0.5,Y=3,n=9", "--out", str(tmp_path))
    rep = _json(out)
    assert code == 0 and rep["sup_u_minus_log_y"] < 1e-15 and rep["sup_residual_interior"] < 1e-10
    coords, u = read_field(tmp_path / "u.field")
    assert np.allclose(u[..., 0], np.log(coords["y"])[None, None, :])


def test_usage_errors_exit_2(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"P": [1], "Q": [0, 1], "R": [0, 1]}))
    assert main(["charges", str(bad)]) == 2
    assert main(["charges", str(tmp_path / "missing.json")]) == 2
    assert main(["model", "--k", "1", "--grid", "y_min=0"]) == 2
    assert main(["model", "--k", "-1"]) == 2
    assert main(["nonsense"]) == 2
    assert main(["accept", "--only", "12"]) == 2
    capsys.readouterr()


def test_accept_only_writes_json(capsys, tmp_path):
    out = tmp_path / "acc.json"
    code, text = run(capsys, "accept", "--only", "2", "--out", str(out))
    assert code == 0 and "[PASS] criterion  2" in text
    rec = json.loads(out.read_text())
    assert rec[0]["number"] == 2 and "seconds" not in rec[0]


@pytest.fixture(scope="module")
def solutions(tmp_path_factory):
    base = tmp_path_factory.mktemp("sol")
    a, b = base / "a", base / "b"
    assert main(["solve", str(DATA / "one_one_z.json"), "--grid", SMALL, "--out", str(a)]) == 0
    assert main(["solve", str(DATA / "one_one_z.json"), "--grid", SMALL, "--init", "warm", "--out", str(b)]) == 0
    return a, b


def test_solve_writes_a_solution_directory(solutions, capsys):
    a, _ = solutions
    for name in ("config.json", "record.json", "s.field", "H.field", "A_theta.field", "A_y.field", "phi_z.field", "phi_1.field"):
        assert (a / name).exists()
    rec = json.loads((a / "record.json").read_text())
    assert all(c["passed"] for c in rec["invariants"].values())
    assert RunConfig.from_json((a / "config.json").read_text()).grid["n2"] == 17


def test_verify_passes_and_is_deterministic(solutions, capsys):
    a, _ = solutions
    code1, out1 = run(capsys, "verify", str(a), "--seed", "4")
    code2, out2 = run(capsys, "verify", str(a), "--seed", "4")
    assert code1 == code2 == 0 and out1 == out2


def test_donaldson_between_two_solves(solutions, capsys):
    a, b = solutions
    code, out = run(capsys, "donaldson", str(a), str(b))
    rep = _json(out)
    assert code == 0 and abs(rep["F"]) <= 1e-6 * rep["report"]["scale"]
    assert rep["sup_H_difference"] < 1e-4


def test_greens_and_fit_commands(capsys, tmp_path):
    from ebe.geometry import build_grid, write_field

    grid = build_grid(L=2.0, Y=4.0, y_min=0.25, n2=9, n3=9, ny=9)
    X2, X3, Y = grid.mesh
    f = np.clip(1 - (X2**2 + X3**2 + (Y - 1.5) ** 2), 0, None) ** 3
    write_field(tmp_path / "f.field", grid, f)
    code, out = run(capsys, "greens", "--t", "0", "--f", str(tmp_path / "f.field"), "--out", str(tmp_path / "g"))
    assert code == 0 and _json(out)["sup_u"] > 0
    code, out = run(capsys, "fit", "--field", str(tmp_path / "g" / "u.field"), "--ray", "1,0", "--vertical")
    assert code == 0 and _json(out)["fit"]["slope"] == pytest.approx(1.0, abs=0.3)
    code, out = run(capsys, "fit", "--field", str(tmp_path / "f.field"), "--ray", "1,0")
    assert code == 2
    assert main(["fit", "--field", str(tmp_path / "f.field"), "--ray", "1,0,1", "--rho", "1", "50", "8"]) == 2
