import json

import pytest

from dpgrid.case import dump_case, dump_partition
from dpgrid.cases import seven_bus
from dpgrid.cli import main


@pytest.fixture
def inputs(tmp_path):
    case, rmap = seven_bus(horizon=6, window_hours=3)
    cpath = tmp_path / "case.json"
    ppath = tmp_path / "part.json"
    dump_case(case, cpath)
    dump_partition(rmap, ppath)
    return str(cpath), str(ppath), tmp_path


def test_cli_centralized(inputs, capsys):
    cpath, ppath, tmp = inputs
    rc = main(["centralized", "--case", cpath, "--relaxed"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "objective=" in out and "status=optimal" in out


def test_cli_run_writes_outputs(inputs, capsys):
    cpath, ppath, tmp = inputs
    rc = main([
        "run", "--case", cpath, "--partition", ppath,
        "--m-alpha", "0", "--eta-mode", "explicit", "--eta", "1.0",
        "--cl", "0.3", "--lookback", "3", "--gamma", "2",
        "--max-iterations", "60", "--rel-gap", "1e-3",
        "--out", str(tmp / "out"),
    ])
    assert rc == 0
    assert (tmp / "out" / "trace.csv").exists()
    assert (tmp / "out" / "summary.csv").exists()
    assert (tmp / "out" / "report.txt").exists()
    out = capsys.readouterr().out
    assert "run" in out


def test_cli_sweep_and_report(inputs, capsys):
    cpath, ppath, tmp = inputs
    rc = main([
        "sweep", "--case", cpath, "--partition", ppath,
        "--m-alpha", "1", "--scale", "0.075", "--gamma", "4",
        "--lookback", "2", "--max-iterations", "5",
        "--seeds", "0,1", "--out", str(tmp / "sweep"),
    ])
    assert rc == 0
    out = capsys.readouterr().out
    assert "2 cells" in out

    rc = main(["report", "--summary", str(tmp / "sweep" / "summary.csv")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "gap (reported)" in out


def test_cli_verify_dp(capsys):
    rc = main(["verify-dp", "--scale", "0.075", "--samples", "150000", "--seed", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "KS statistic" in out
    assert "density-ratio bound" in out
    assert "PASS" in out


def test_cli_config_file(inputs, capsys):
    cpath, ppath, tmp = inputs
    cfg = {
        "case_path": cpath,
        "partition_path": ppath,
        "m_alpha": 0.0,
        "eta_mode": "explicit",
        "eta": 1.0,
        "cl": 0.3,
        "lookback": 3,
        "gamma": 2,
        "max_iterations": 60,
        "rel_gap": 1e-3,
    }
    cfg_path = tmp / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    rc = main(["run", "--config", str(cfg_path), "--out", str(tmp / "out2")])
    assert rc == 0
    assert (tmp / "out2" / "trace.csv").exists()


def test_cli_bad_inputs_exit_nonzero(tmp_path, capsys):
    missing = str(tmp_path / "nope.json")
    rc = main(["centralized", "--case", missing])
    assert rc == 1
    err = capsys.readouterr().err
    assert "error:" in err
