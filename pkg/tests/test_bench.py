import numpy as np
import pytest

from dpgrid.bench import (
    ExperimentConfig,
    centralized_solve,
    flow_noise_norm,
    optimality_gap,
    report_text,
    run_experiment,
    summary_csv,
    sweep,
    trace_csv,
    write_outputs,
)
from dpgrid.case import Generator, dump_case, dump_partition, partition
from dpgrid.cases import seven_bus
from dpgrid.errors import ConfigError
from dpgrid.protocol import RunConfig
from dpgrid.regional import local_cost
from tests.conftest import make_case


def small_case():
    return seven_bus(horizon=6, window_hours=3)


def test_gap_arithmetic():
    assert optimality_gap(1.0, 1.0, True) == 0.0
    assert optimality_gap(1.05, 1.0, True) == pytest.approx(0.05)
    assert optimality_gap(0.95, 1.0, True) == pytest.approx(0.05)
    assert optimality_gap(123.0, 1.0, False) == pytest.approx(0.16)
    with pytest.raises(ConfigError):
        optimality_gap(1.0, 0.0, True)


def test_gap_scale_invariance():
    # multiplying all costs by c > 0 scales both objectives identically
    for c in (2.0, 10.0, 0.5):
        assert optimality_gap(c * 1.07, c * 1.0, True) == pytest.approx(0.07)


def test_flow_noise_norm_basics(rng):
    v = rng.normal(size=32)
    assert flow_noise_norm(v, v) == 0.0
    with pytest.raises(ConfigError):
        flow_noise_norm(np.zeros(3), np.zeros(4))


def test_flow_noise_scale_linearity(rng):
    # doubling the Laplace scale doubles the expected norm
    true = rng.normal(size=(30, 64))
    s = 0.1
    norms1 = [flow_noise_norm(t, t + rng.laplace(0, s, t.shape)) for t in true]
    norms2 = [flow_noise_norm(t, t + rng.laplace(0, 2 * s, t.shape)) for t in true]
    ratio = np.mean(norms2) / np.mean(norms1)
    assert ratio == pytest.approx(2.0, rel=0.25)


def test_centralized_matches_single_bus_oracle():
    case = make_case(
        buses=("N1",),
        gens=(
            Generator("G1", "N1", dispatch_cost=2.0, commitment_cost=5.0,
                      p_min=5.0, p_max=20.0, ramp=20.0, min_up=1, min_down=1),
        ),
        demand={"N1": (10.0, 10.0)},
        horizon=2,
        window_hours=1,
    )
    res = centralized_solve(case, slack_penalty=None)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(50.0)  # 2*(10*2 + 5), by hand


def test_single_region_decentralized_equals_centralized():
    case = make_case(
        buses=("N1",),
        gens=(
            Generator("G1", "N1", dispatch_cost=2.0, commitment_cost=5.0,
                      p_min=5.0, p_max=20.0, ramp=20.0, min_up=1, min_down=1),
        ),
        demand={"N1": (10.0, 10.0)},
        horizon=2,
        window_hours=1,
    )
    part = partition(case, {"N1": 1})
    cfg = RunConfig(m_alpha=0, eta_mode="explicit", eta=1.0, lookback=2,
                    points_per_block=1, max_iterations=20, cl=1e-6)
    result, cell = run_experiment(case, part, cfg)
    assert cell.converged
    assert cell.gap_raw == pytest.approx(0.0, abs=1e-9)
    sched = result.schedule
    assert local_cost(sched[1]) == pytest.approx(50.0)


def test_sweep_composition_and_outputs(tmp_path):
    case, rmap = small_case()
    part = partition(case, rmap)
    base = RunConfig(m_alpha=0, eta_mode="explicit", eta=1.0, cl=0.2,
                     lookback=3, points_per_block=2, max_iterations=200,
                     rel_gap=1e-3)
    result = sweep(case, part, base, seeds=[0, 1])
    assert len(result.cells) == 2
    # trace row count: per cell, iterations x regions per phase
    for seed in (0, 1):
        rows = [t for t in result.trace if t[3] == seed]
        cell = next(c for c in result.cells if c.seed == seed)
        expected = (cell.phase1_iterations + cell.phase2_iterations) * len(part.regions)
        assert len(rows) == expected

    paths = write_outputs(result, base, tmp_path)
    assert set(paths) == {"trace.csv", "summary.csv", "report.txt"}
    text = (tmp_path / "summary.csv").read_text()
    assert text.splitlines()[0].startswith("scale,cl,gamma,seed,converged")
    assert len(text.strip().splitlines()) == 3
    report = (tmp_path / "report.txt").read_text()
    assert "centralized benchmark" in report
    assert "computational time over all cells incl. non-converged" in report


def test_sweep_records_cell_failures():
    case, rmap = small_case()
    part = partition(case, rmap)
    base = RunConfig(m_alpha=1, scale=0.075, eta_mode="table", gamma=4,
                     lookback=2, points_per_block=2, max_iterations=4)
    bad = sweep(case, part, base, scales=[-1.0])  # invalid scale fails the cell
    assert len(bad.cells) == 1
    assert bad.cells[0].status == "error"
    assert bad.cells[0].gap_reported == pytest.approx(0.16)


def test_trace_csv_deterministic_bytes():
    case, rmap = small_case()
    part = partition(case, rmap)
    base = RunConfig(m_alpha=1, scale=0.075, eta_mode="table", gamma=4,
                     lookback=2, points_per_block=2, max_iterations=6, seed=9)
    cent = centralized_solve(case, rel_gap=1e-3)
    a = sweep(case, part, base, centralized=cent)
    b = sweep(case, part, base, centralized=cent)
    assert trace_csv(a.trace) == trace_csv(b.trace)
    assert summary_csv(a.cells) == summary_csv(b.cells)


def test_experiment_config_file_roundtrip(tmp_path):
    case, rmap = small_case()
    cpath = tmp_path / "case.json"
    ppath = tmp_path / "part.json"
    dump_case(case, cpath)
    dump_partition(rmap, ppath)
    doc = {"case_path": str(cpath), "partition_path": str(ppath), "scale": 0.075, "seed": 4}
    import json

    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(doc))
    cfg = ExperimentConfig.from_file(cfg_path)
    assert cfg.scale == 0.075
    loaded_case, loaded_part = cfg.load_inputs()
    assert loaded_case == case

    cfg_path.write_text(json.dumps({**doc, "bogus_knob": 1}))
    with pytest.raises(ConfigError, match="bogus_knob"):
        ExperimentConfig.from_file(cfg_path)
