import math

import numpy as np
import pytest

from dpgrid.chart import ChartConfig, ChartState, alarm_check, local_convergence
from dpgrid.errors import ConfigError


def cfg(**kw):
    base = dict(window=3, points_per_block=2, noise_scale=0.05, cl=0.1)
    base.update(kw)
    return ChartConfig(**base)


def state(buses=("B1",), **kw):
    return ChartState(cfg(**kw), buses=tuple(buses))


def test_point_emission_and_cancellation():
    s = state()
    assert s.record_iteration({"B1": 0.1}) == []
    assert s.record_iteration({"B1": -0.1}) == []
    emitted = s.record_iteration({"B1": 0.0})
    assert len(emitted) == 1
    bus, point, alarmed = emitted[0]
    assert bus == "B1"
    assert point == pytest.approx(0.0)
    assert not alarmed


def test_sum_mode_point_value():
    s = state(mode="sum")
    s.record_iteration({"B1": 0.1})
    s.record_iteration({"B1": 0.2})
    (bus, point, _), = s.record_iteration({"B1": 0.3})
    assert point == pytest.approx(0.6)


def test_threshold_values():
    c = cfg(window=20, noise_scale=0.05, limit_multiplier=1.0)
    assert c.threshold == pytest.approx(math.sqrt(2 * 0.05**2 / 20))
    c_sum = cfg(window=20, noise_scale=0.05, mode="sum")
    assert c_sum.threshold == pytest.approx(math.sqrt(2 * 0.05**2 * 20))
    c_off = cfg(m_alpha=0.0)
    assert c_off.threshold == 0.0
    assert not c_off.chart_active


def test_alarm_rule_strict_inequality():
    c = cfg(m_alpha=0.0)
    assert not alarm_check(0.0, c)  # zero band, zero point: in control
    assert alarm_check(1e-9, c)
    c1 = cfg()
    assert not alarm_check(c1.threshold, c1)
    assert alarm_check(c1.threshold * 1.0001, c1)


def test_persistent_bias_always_alarms():
    c = cfg(window=5, points_per_block=2)
    s = ChartState(c, buses=("B1",))
    bias = 5.0 * c.threshold
    alarms = 0
    points = 0
    for _ in range(30):
        for _, _, alarmed in s.record_iteration({"B1": bias}):
            points += 1
            alarms += alarmed
    assert points == 6
    assert alarms == points


def test_kappa_counts_tripped_buses_per_block():
    c = cfg(window=1, points_per_block=3, max_alarms_per_block=1)
    s = ChartState(c, buses=("B1", "B2"))
    big = 10 * c.threshold
    # B1 alarms on all three points, B2 stays at zero
    for _ in range(3):
        s.record_iteration({"B1": big, "B2": 0.0})
    assert s.blocks_completed == 1
    assert s.kappa == 1
    # next block: both quiet
    for _ in range(3):
        s.record_iteration({"B1": 0.0, "B2": 0.0})
    assert s.blocks_completed == 2
    assert s.kappa == 0  # kappa resets per block


def test_single_alarm_per_block_is_tolerated():
    c = cfg(window=1, points_per_block=4, max_alarms_per_block=1)
    s = ChartState(c, buses=("B1",))
    big = 10 * c.threshold
    for d in (big, 0.0, 0.0, 0.0):
        s.record_iteration({"B1": d})
    assert s.kappa == 0  # one alarm in the block does not trip the bus


def test_local_convergence_examples():
    # beta arithmetic: CL=0.1, |B_r|=5, |T|=24 -> 12
    c = cfg(window=1, points_per_block=1, cl=0.1)
    s = ChartState(c, buses=("B1",))
    s.record_iteration({"B1": 0.0})
    assert 0.1 * 5 * 24 == pytest.approx(12.0)
    assert local_convergence(s, 11.9, 11.9, 5, 24)
    assert not local_convergence(s, 12.0, 0.0, 5, 24)
    assert not local_convergence(s, 0.0, 12.0, 5, 24)


def test_alarm_veto_blocks_convergence():
    c = cfg(window=1, points_per_block=4, max_alarms_per_block=1)
    s = ChartState(c, buses=("B1",))
    big = 10 * c.threshold
    for _ in range(4):
        s.record_iteration({"B1": big})  # kappa = S_p alarms -> bus tripped
    assert s.kappa == 1
    # kappa <= 1 passes, but kappa < |B_r| = 1 vetoes
    assert not local_convergence(s, 0.0, 0.0, 1, 24)


def test_noiseless_chart_inactive_skips_veto():
    c = cfg(window=1, points_per_block=2, m_alpha=0.0)
    s = ChartState(c, buses=("B1",))
    s.record_iteration({"B1": 1e-5})  # alarmed (band is zero)
    s.record_iteration({"B1": 1e-5})
    assert s.kappa == 1
    assert local_convergence(s, 0.0, 0.0, 1, 24)  # veto skipped: chart inactive


def test_noiseless_exact_match_never_alarms():
    c = cfg(window=1, points_per_block=2, m_alpha=0.0)
    s = ChartState(c, buses=("B1",))
    s.record_iteration({"B1": 0.0})
    s.record_iteration({"B1": 0.0})
    assert s.kappa == 0


def test_no_verdict_before_first_block():
    s = state()
    assert not local_convergence(s, 0.0, 0.0, 1, 24)


def test_empty_bus_set_blocks_advance():
    c = cfg(window=2, points_per_block=2)
    s = ChartState(c, buses=())
    for _ in range(4):
        s.record_iteration({})
    assert s.blocks_completed == 1
    assert local_convergence(s, 0.0, 0.0, 0, 24)


def test_in_control_alarm_rate_matches_normal_tail(rng):
    # mean of 20 symmetric noise terms inside a one-sigma band
    c = cfg(window=20, points_per_block=5, noise_scale=0.05, limit_multiplier=1.0)
    n_points = 4000
    draws = rng.laplace(0.0, c.noise_scale, size=(n_points, c.window))
    points = draws.mean(axis=1)
    rate = float(np.mean(np.abs(points) > c.threshold))
    assert abs(rate - 0.3173) < 0.03


def test_config_validation():
    with pytest.raises(ConfigError):
        cfg(window=0)
    with pytest.raises(ConfigError):
        cfg(mode="median")
    with pytest.raises(ConfigError):
        cfg(cl=0.0)
