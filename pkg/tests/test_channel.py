import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.special import lambertw

from uowsn_loc.channel import (
    DISTANCE_DOMAIN,
    POWER_DOMAIN,
    ChannelParams,
    MeasurementInvalidError,
    RangeMeasurement,
    add_measurement_noise,
    channel_gain,
    estimate_range,
    estimate_ranges,
    extinction_coefficient,
    lambert_w0,
    link_constant,
    range_from_power,
    received_power,
    received_power_derivative,
)

OMEGA = 0.5671432904097838  # omega constant, W0(1)


def _omega_fixed_point():
    w = 0.5
    for _ in range(200):
        w = math.exp(-w)
    return w


def test_extinction_is_sum_of_losses():
    assert extinction_coefficient(ChannelParams()) == pytest.approx(0.151, abs=1e-15)


def test_channel_gain_values():
    assert channel_gain(0.151, 0.0) == 1.0
    assert channel_gain(0.151, 10.0) == pytest.approx(math.exp(-1.51), rel=1e-15)


def test_received_power_matches_hand_formula():
    p = ChannelParams()
    k = 0.1 * 0.9 * 0.9 * 0.01 * 1.0 / (2 * math.pi * (1 - 0.5))
    assert link_constant(p) == pytest.approx(k, rel=1e-14)
    for d in (0.5, 1.0, 20.0, 150.0):
        assert received_power(p, d) == pytest.approx(k * math.exp(-0.151 * d) / d**2, rel=1e-13)


def test_received_power_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        received_power(ChannelParams(), 0.0)
    with pytest.raises(ValueError):
        received_power(ChannelParams(), [1.0, -1.0])


def test_received_power_derivative_matches_central_difference():
    p = ChannelParams()
    for d in (0.3, 5.0, 40.0):
        h = 1e-6 * d
        fd = (received_power(p, d + h) - received_power(p, d - h)) / (2 * h)
        assert received_power_derivative(p, d) == pytest.approx(fd, rel=1e-7)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"absorption": -0.1},
        {"absorption": 0.0, "scattering": 0.0},
        {"tx_power": 0.0},
        {"tx_efficiency": 1.5},
        {"divergence_half_angle": 0.0},
        {"pointing_angle": math.pi / 2},
    ],
)
def test_channel_params_validation(kwargs):
    with pytest.raises(ValueError):
        ChannelParams(**kwargs)


def test_lambert_w0_omega_constant_matches_fixed_point():
    oracle = _omega_fixed_point()
    assert abs(oracle - OMEGA) < 1e-15
    assert abs(lambert_w0(1.0) - oracle) < 1e-10


def test_lambert_w0_special_points():
    assert lambert_w0(0.0) == 0.0
    assert lambert_w0(math.e) == pytest.approx(1.0, abs=1e-15)
    assert lambert_w0(-1 / math.e) == pytest.approx(-1.0, abs=1e-7)


def test_lambert_w0_agrees_with_scipy():
    x = np.concatenate((np.linspace(-0.36, 0.0, 200), np.logspace(-10, 8, 500)))
    ours = lambert_w0(x)
    ref = lambertw(x, 0).real
    np.testing.assert_allclose(ours, ref, rtol=1e-13, atol=1e-15)


def test_lambert_w0_domain_error():
    with pytest.raises(ValueError):
        lambert_w0(-0.5)


@given(st.floats(min_value=0.0, max_value=1e12, allow_nan=False))
def test_lambert_w0_residual_property(x):
    w = lambert_w0(x)
    assert abs(w * math.exp(w) - x) <= 1e-12 * max(1.0, x)


@given(
    st.floats(0.01, 1.0),
    st.floats(0.0, 0.5),
    st.floats(1e-3, 10.0),
    st.floats(0.05, 1.5),
    st.floats(0.1, 200.0),
)
def test_range_round_trip_property(absorption, scattering, tx_power, half_angle, d):
    p = ChannelParams(absorption=absorption, scattering=scattering, tx_power=tx_power,
                      divergence_half_angle=half_angle)
    assert abs(range_from_power(p, received_power(p, d)) - d) / d < 1e-9


def test_range_inverse_against_root_finder():
    # independent route: bracket the root of P(d) = P_obs without Lambert W
    p = ChannelParams()
    for p_obs in (1e-3, 1e-6, 1e-9, 1e-12):
        d_ref = brentq(lambda d: received_power(p, d) - p_obs, 1e-6, 1e4, xtol=1e-14, rtol=1e-15)
        assert range_from_power(p, p_obs) == pytest.approx(d_ref, rel=1e-10)


def test_range_from_power_rejects_nonpositive():
    with pytest.raises(MeasurementInvalidError):
        range_from_power(ChannelParams(), 0.0)


def test_noise_is_deterministic_per_seed():
    a = add_measurement_noise(10.0, math.sqrt(0.02), DISTANCE_DOMAIN, np.random.default_rng(7))
    b = add_measurement_noise(10.0, math.sqrt(0.02), DISTANCE_DOMAIN, np.random.default_rng(7))
    assert a == b
    assert a.observed_value != 10.0


def test_noise_zero_sigma_is_exact():
    m = add_measurement_noise(3.0, 0.0, POWER_DOMAIN, np.random.default_rng(0))
    assert m.observed_value == 3.0


def test_noise_statistics():
    rng = np.random.default_rng(1)
    vals = np.array([add_measurement_noise(0.0, 2.0, DISTANCE_DOMAIN, rng).observed_value for _ in range(20000)])
    assert abs(vals.mean()) < 0.05
    assert vals.std() == pytest.approx(2.0, rel=0.03)


def test_estimate_distance_mode_averages():
    ms = [RangeMeasurement(0, 1, v, 0.4) for v in (9.0, 10.0, 11.0, 10.0)]
    d, s = estimate_range(ms)
    assert d == pytest.approx(10.0)
    assert s == pytest.approx(0.2)


def test_estimate_power_mode_discards_nonpositive_samples():
    p = ChannelParams()
    true_p = received_power(p, 12.0)
    ms = [RangeMeasurement(0, 1, v, 1e-7, POWER_DOMAIN) for v in (true_p, -1e-6, true_p)]
    d, _ = estimate_range(ms, p)
    assert d == pytest.approx(12.0, rel=1e-12)


def test_estimate_power_mode_all_invalid_raises():
    ms = [RangeMeasurement(2, 5, -1.0, 0.1, POWER_DOMAIN)]
    with pytest.raises(MeasurementInvalidError):
        estimate_range(ms, ChannelParams())


def test_power_mode_sigma_is_first_order_propagation():
    p = ChannelParams()
    d0 = 15.0
    sigma_p = 1e-9
    _, s, valid = estimate_ranges(np.array([[received_power(p, d0)]]), sigma_p, POWER_DOMAIN, p)
    h = 1e-6
    slope = (received_power(p, d0 + h) - received_power(p, d0 - h)) / (2 * h)
    assert valid[0]
    assert s[0] == pytest.approx(sigma_p / abs(slope), rel=1e-6)


def test_estimate_range_rejects_mixed_links():
    ms = [RangeMeasurement(0, 1, 1.0, 0.1), RangeMeasurement(0, 2, 1.0, 0.1)]
    with pytest.raises(ValueError):
        estimate_range(ms)


def test_distance_mode_nonpositive_mean_is_invalid():
    d, s, valid = estimate_ranges(np.array([[0.3, -0.5], [1.0, 2.0]]), 0.1, DISTANCE_DOMAIN)
    np.testing.assert_array_equal(valid, [False, True])
    assert np.isnan(d[0]) and d[1] == 1.5
    with pytest.raises(MeasurementInvalidError):
        estimate_range([RangeMeasurement(0, 1, -0.2, 0.1)])
