import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpgrid.consensus import (
    ETA_TABLE,
    ConsensusState,
    dual_update,
    ewma_update,
    intermediate_consensus,
    mixing_factor,
)
from dpgrid.errors import ConfigError

PUBLISHED_ETA = {
    (0.015, 4): 0.997, (0.015, 8): 0.9976, (0.015, 12): 0.9982,
    (0.015, 16): 0.9988, (0.015, 20): 0.9994,
    (0.03, 4): 0.994, (0.03, 8): 0.9952, (0.03, 12): 0.9964,
    (0.03, 16): 0.9976, (0.03, 20): 0.9988,
    (0.075, 4): 0.985, (0.075, 8): 0.988, (0.075, 12): 0.991,
    (0.075, 16): 0.994, (0.075, 20): 0.997,
    (0.15, 4): 0.97, (0.15, 8): 0.976, (0.15, 12): 0.982,
    (0.15, 16): 0.988, (0.15, 20): 0.994,
    (0.3, 4): 0.94, (0.3, 8): 0.952, (0.3, 12): 0.964,
    (0.3, 16): 0.976, (0.3, 20): 0.988,
}


def test_ewma_degenerate_passthrough():
    assert ewma_update(123.0, 0.3, eta=1.0) == pytest.approx(0.3)


def test_ewma_single_step():
    assert ewma_update(0.0, 1.0, eta=0.997) == pytest.approx(0.997)


def test_ewma_first_iteration_seeds_memory():
    assert ewma_update(55.0, 0.42, eta=0.5, first=True) == pytest.approx(0.42)


def test_ewma_rejects_bad_eta():
    with pytest.raises(ConfigError):
        ewma_update(0.0, 1.0, eta=0.0)
    with pytest.raises(ConfigError):
        ewma_update(0.0, 1.0, eta=1.5)


def test_ewma_geometric_contraction_exact():
    eta = 0.9
    v = 2.5
    memory = 0.0
    for k in range(1, 21):
        memory = ewma_update(memory, v, eta)
        expected = v + (1 - eta) ** k * (0.0 - v)
        assert memory == pytest.approx(expected, rel=1e-12)


def test_intermediate_consensus_mean():
    assert intermediate_consensus(0.4, 0.6) == pytest.approx(0.5)
    assert intermediate_consensus(100.0, 80.0) == pytest.approx(90.0)
    theta = 0.123
    assert intermediate_consensus(theta, theta) == pytest.approx(theta)


def test_dual_update_arithmetic():
    assert dual_update(0.0, 0.1, 0.0, rho=2.0) == pytest.approx(0.2)
    lam = dual_update(5.0, 0.7, 0.7, rho=3.0)
    assert lam == pytest.approx(5.0)  # zero residual leaves duals unchanged


def test_dual_update_telescopes():
    lam = 1.0
    lam = dual_update(lam, 0.5, 0.4, rho=2.0)
    lam = dual_update(lam, 0.3, 0.4, rho=2.0)
    assert lam == pytest.approx(1.0)


def test_mixing_table_matches_published_cells():
    assert len(ETA_TABLE) == 25
    for key, eta in PUBLISHED_ETA.items():
        assert mixing_factor(*key, mode="table") == eta
    assert mixing_factor(0.075, 12) == 0.991
    assert mixing_factor(0.30, 20) == 0.988


def test_mixing_formula_fits_every_cell():
    for (scale, gamma), eta in PUBLISHED_ETA.items():
        assert round(mixing_factor(scale, gamma, mode="formula"), 4) == round(eta, 4)


def test_mixing_table_rejects_off_grid():
    with pytest.raises(ConfigError):
        mixing_factor(0.02, 4, mode="table")
    # formula mode extrapolates instead
    assert 0.9 < mixing_factor(0.02, 4, mode="formula") < 1.0


@settings(max_examples=50, deadline=None)
@given(
    eta=st.floats(min_value=0.01, max_value=1.0),
    prev=st.floats(min_value=-10, max_value=10),
    received=st.floats(min_value=-10, max_value=10),
)
def test_ewma_stays_between_inputs(eta, prev, received):
    out = float(ewma_update(prev, received, eta))
    lo, hi = min(prev, received), max(prev, received)
    assert lo - 1e-9 <= out <= hi + 1e-9


@settings(max_examples=50, deadline=None)
@given(
    own=st.floats(min_value=-100, max_value=100),
    smoothed=st.floats(min_value=-100, max_value=100),
)
def test_consensus_is_symmetric_mean(own, smoothed):
    a = float(intermediate_consensus(own, smoothed))
    b = float(intermediate_consensus(smoothed, own))
    assert a == pytest.approx(b, abs=1e-12)
    assert min(own, smoothed) - 1e-9 <= a <= max(own, smoothed) + 1e-9


def make_state(**kw):
    return ConsensusState(
        buses=("B", "C"),
        ties=(("B", "G"),),
        horizon=3,
        **kw,
    )


def test_state_initialization_and_shapes():
    st_ = make_state(rho_theta=2.0, rho_f=3.0, eta=0.9)
    assert st_.lam.shape == (2, 3)
    assert st_.phi.shape == (1, 3)
    assert not st_.active


def test_state_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        make_state(eta=1.2)
    with pytest.raises(ConfigError):
        make_state(rho_theta=0.0)


def test_state_full_update_cycle():
    st_ = make_state(eta=1.0, rho_theta=1.0, rho_f=1.0)
    own_theta = np.array([[0.4, 0.4, 0.4], [0.2, 0.2, 0.2]])
    own_flow = np.array([[1.0, 1.0, 1.0]])
    recv = {("B", 3): np.array([0.6, 0.6, 0.6]), ("C", 3): np.array([0.2, 0.2, 0.2])}
    implied = {("B", "G"): np.array([0.8, 0.8, 0.8])}
    st_.update_from_neighbors(own_theta, own_flow, recv, implied, first=True)
    assert st_.theta_bar[0, 0] == pytest.approx(0.5)
    assert st_.theta_bar[1, 0] == pytest.approx(0.2)
    assert st_.f_bar[0, 0] == pytest.approx(0.9)
    assert st_.lam[0, 0] == pytest.approx(0.4 - 0.5)
    assert st_.phi[0, 0] == pytest.approx(1.0 - 0.9)
    primal, dual = st_.residuals(own_theta)
    assert primal == pytest.approx(0.1 * 3)
    assert math.isinf(dual)  # no previous consensus yet

    # identical second exchange: duals keep ratcheting, consensus stable
    st_.update_from_neighbors(own_theta, own_flow, recv, implied, first=False)
    primal2, dual2 = st_.residuals(own_theta)
    assert dual2 == pytest.approx(0.0, abs=1e-12)
    assert st_.lam[0, 0] == pytest.approx(2 * (0.4 - 0.5))


def test_dual_stationarity_at_consensus():
    st_ = make_state(eta=1.0)
    own_theta = np.full((2, 3), 0.3)
    own_flow = np.zeros((1, 3))
    recv = {("B", 3): np.full(3, 0.3), ("C", 3): np.full(3, 0.3)}
    implied = {("B", "G"): np.zeros(3)}
    st_.update_from_neighbors(own_theta, own_flow, recv, implied, first=True)
    lam0 = st_.lam.copy()
    for _ in range(5):
        st_.update_from_neighbors(own_theta, own_flow, recv, implied, first=False)
    assert np.allclose(st_.lam, lam0)
    assert np.allclose(st_.theta_bar, 0.3)


def test_multi_sender_average():
    st_ = make_state(eta=1.0)
    own_theta = np.zeros((2, 3))
    own_flow = np.zeros((1, 3))
    recv = {("B", 2): np.full(3, 0.2), ("B", 3): np.full(3, 0.4), ("C", 3): np.zeros(3)}
    implied = {("B", "G"): np.zeros(3)}
    st_.update_from_neighbors(own_theta, own_flow, recv, implied, first=True)
    # smoothed estimate for B is the mean of the two senders
    assert st_.theta_bar[0, 0] == pytest.approx(0.5 * (0.0 + 0.3))
