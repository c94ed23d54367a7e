import numpy as np
import pytest
from hypothesis import given, strategies as st

from guidedistill.schedule import (
    CosineSchedule,
    bridge_variance,
    loss_weight,
    make_schedule,
)

# log(cot^2(pi/8)), mpmath at 50 digits: 1.762747174039086050465219
LOG_SNR_QUARTER = 1.762747174039086


def test_alpha_sigma_boundaries(schedule):
    a0, s0 = schedule.alpha_sigma(0.0)
    assert a0 == 1.0 and s0 == 0.0
    a1, s1 = schedule.alpha_sigma(1.0)
    assert abs(a1) < 1e-12 and abs(s1 - 1.0) < 1e-12


def test_alpha_sigma_midpoint(schedule):
    a, s = schedule.alpha_sigma(0.5)
    assert a == pytest.approx(np.sqrt(0.5), abs=1e-12)
    assert s == pytest.approx(np.sqrt(0.5), abs=1e-12)


def test_alpha_sigma_rejects_out_of_range(schedule):
    with pytest.raises(ValueError):
        schedule.alpha_sigma(-0.01)
    with pytest.raises(ValueError):
        schedule.alpha_sigma(1.01)


def test_variance_preserving_on_dense_grid(schedule):
    t = np.linspace(0.0, 1.0, 20001)
    a, s = schedule.alpha_sigma(t)
    assert np.max(np.abs(a**2 + s**2 - 1.0)) < 1e-12


def test_log_snr_values(schedule):
    assert schedule.log_snr(0.5) == pytest.approx(0.0, abs=1e-12)
    assert schedule.log_snr(0.25) == pytest.approx(LOG_SNR_QUARTER, abs=1e-12)
    # antisymmetry of the cosine schedule about t = 0.5
    assert schedule.log_snr(0.75) == pytest.approx(-LOG_SNR_QUARTER, abs=1e-12)


def test_log_snr_rejects_endpoints(schedule):
    for t in (0.0, 1.0, -0.2, 1.2):
        with pytest.raises(ValueError):
            schedule.log_snr(t)


def test_log_snr_strictly_decreasing(schedule):
    t = np.linspace(1e-4, 1.0 - 1e-4, 5001)
    lam = schedule.log_snr(t)
    assert np.all(np.diff(lam) < 0.0)


@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_log_snr_order_matches_time_order(t1, t2):
    schedule = CosineSchedule()
    if abs(t1 - t2) < 1e-9:  # below rounding resolution of log_snr
        return
    lo, hi = min(t1, t2), max(t1, t2)
    assert schedule.log_snr(lo) > schedule.log_snr(hi)


def test_loss_weight_examples():
    assert loss_weight("snr", 0.0) == 1.0
    assert loss_weight("truncated-snr", -2.0) == 1.0
    assert loss_weight("snr", -2.0) == pytest.approx(np.exp(-2.0), rel=1e-15)


@given(st.floats(-60.0, 60.0))
def test_truncated_snr_is_clipped_snr(lam):
    assert loss_weight("truncated-snr", lam) == max(loss_weight("snr", lam), 1.0)


def test_loss_weight_rejects_nonfinite_and_unknown():
    with pytest.raises(ValueError):
        loss_weight("snr", np.inf)
    with pytest.raises(ValueError):
        loss_weight("bogus", 0.0)


def test_bridge_variance_examples():
    assert bridge_variance(1.3, 1.3, 0.7) == 0.0
    assert bridge_variance(np.log(0.5), 0.0, np.sqrt(0.5)) == pytest.approx(0.25, abs=1e-15)
    assert bridge_variance(-1.0, np.inf, 0.9) == pytest.approx(0.81, abs=1e-15)


def test_bridge_variance_rejects_bad_inputs():
    with pytest.raises(ValueError):
        bridge_variance(0.5, 0.0, 1.0)  # lam_a > lam_b
    with pytest.raises(ValueError):
        bridge_variance(0.0, 1.0, -0.1)


@given(st.floats(-20.0, 20.0), st.floats(0.0, 40.0), st.floats(0.01, 2.0))
def test_bridge_variance_monotone_and_bounded(lam_a, gap, sigma_a):
    v = bridge_variance(lam_a, lam_a + gap, sigma_a)
    v_wider = bridge_variance(lam_a, lam_a + gap + 1.0, sigma_a)
    assert 0.0 <= v <= sigma_a**2 + 1e-15
    assert v_wider >= v


def test_make_schedule():
    assert make_schedule("cosine-vp").kind == "cosine-vp"
    with pytest.raises(ValueError):
        make_schedule("linear")
