import math

import numpy as np
import pytest

from multirotor_ftc.attitude import (H3_MIN, RateGains, ReducedAttitudeState, StickShaper, rate_controller,
                                     stick_to_direction, tilt_controller)
from multirotor_ftc.dynamics import rotation_from_euler


def state_with(h, r=0.0):
    h = np.asarray(h, dtype=float)
    return ReducedAttitudeState(h / np.linalg.norm(h), np.array([0.0, 0.0, -1.0]), r, np.eye(3))


def h_dot(h, p, q, r):
    """Body-frame rate of change of a fixed inertial direction."""
    return -np.cross([p, q, r], h)


def test_aligned_axis_needs_no_rates():
    for r in (0.0, 5.0, -20.0):
        out = tilt_controller(state_with([0, 0, -1], r), RateGains())
        assert out.p_des == pytest.approx(0.0, abs=1e-15) and out.q_des == pytest.approx(0.0, abs=1e-15)


def test_small_tilt_error_gives_first_order_decay():
    eps, k = 0.05, 6.0
    h = np.array([eps, 0.0, -math.sqrt(1 - eps**2)])
    out = tilt_controller(state_with(h), RateGains(k1=k, k2=k))
    assert out.p_des == pytest.approx(0.0, abs=1e-15)
    assert out.q_des == pytest.approx(k * eps / h[2], rel=1e-12)
    # the commanded rates make h1 decay at rate k
    np.testing.assert_allclose(h_dot(h, out.p_des, out.q_des, 0.0)[:2], [-k * eps, 0.0], atol=1e-12)


@pytest.mark.parametrize("r", [0.0, 3.0, -20.0])
def test_commanded_rates_realize_the_requested_h_dot(r):
    rng = np.random.default_rng(5)
    g = RateGains(k1=4.0, k2=7.0)
    for _ in range(50):
        h = rng.normal(size=3)
        h[2] = -abs(h[2]) - 0.5
        h /= np.linalg.norm(h)
        st = state_with(h, r)
        out = tilt_controller(st, g)
        got = h_dot(st.n_body_des, out.p_des, out.q_des, r)[:2]
        np.testing.assert_allclose(got, [-g.k1 * st.n_body_des[0], -g.k2 * st.n_body_des[1]], atol=1e-12)


def test_spinning_body_keeps_inertial_correction_fixed():
    r = 20.0
    n_des = np.array([math.sin(0.2), 0.0, -math.cos(0.2)])
    R0 = rotation_from_euler(0.05, -0.03, 0.4)  # inertial from body
    gains = RateGains(k1=5.0, k2=5.0)
    directions = []
    for psi in np.linspace(0, 2 * math.pi, 13):
        c, s = math.cos(psi), math.sin(psi)
        R = R0 @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
        st = ReducedAttitudeState.from_estimate(R.T, n_des, r)
        out = tilt_controller(st, gains)
        directions.append(R @ np.array([out.p_des, out.q_des, 0.0]))
    directions = np.array(directions)
    assert np.max(np.abs(directions - directions[0])) < 1e-6


def test_desired_direction_rate_adds_feed_forward():
    st = state_with([0, 0, -1])
    still = tilt_controller(st, RateGains())
    moving = tilt_controller(st, RateGains(), n_inertial_des_dot=(0.5, 0.0, 0.0))
    # the body rotation cancels the reference drift: q picks up nd1/h3
    assert moving.q_des - still.q_des == pytest.approx(0.5 / -1.0)
    assert moving.p_des == pytest.approx(still.p_des)
    drift = h_dot(st.n_body_des, moving.p_des, moving.q_des, 0.0) + [0.5, 0.0, 0.0]
    np.testing.assert_allclose(drift[:2], [0.0, 0.0], atol=1e-12)


def test_singularity_guard_bounds_the_output():
    h = np.array([1.0, 0.0, -0.01])
    out = tilt_controller(state_with(h), RateGains(k1=1.0, k2=1.0))
    assert out.guarded
    assert abs(out.q_des) <= 1.0 / H3_MIN + 1e-12
    assert not tilt_controller(state_with([0.1, 0, -1]), RateGains()).guarded


def test_rate_controller_terms():
    g = RateGains(Kp_p=4.0, Kp_q=4.0)
    assert rate_controller(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, g) == (0.0, 0.0)
    assert rate_controller(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, g) == (4.0, -4.0)
    ff = RateGains(Kp_p=4.0, Kp_q=4.0, Kff_p=0.5, Kff_q=0.5, Kd_p=-0.1, Kd_q=-0.1)
    p_dot, q_dot = rate_controller(2.0, 2.0, 2.0, 2.0, 3.0, 0.0, ff)
    assert p_dot == pytest.approx(0.5 * 2.0 - 0.1 * 3.0)
    assert q_dot == pytest.approx(1.0)


def test_rate_controller_is_stateless():
    g = RateGains()
    first = rate_controller(0.1, -0.2, 0.3, 0.1, 0.0, 0.0, g)
    for _ in range(5):
        rate_controller(5.0, 5.0, -5.0, -5.0, 1.0, 1.0, g)
    assert rate_controller(0.1, -0.2, 0.3, 0.1, 0.0, 0.0, g) == first


def test_gains_validation():
    with pytest.raises(ValueError):
        RateGains(k1=0.0)
    with pytest.raises(ValueError):
        RateGains.from_dict({"k3": 1.0})
    assert RateGains.from_dict({"k1": "3"}).k1 == 3.0


def test_stick_mapping():
    np.testing.assert_array_equal(stick_to_direction(0.0, 0.0, 0.3), [0.0, 0.0, -1.0])
    v = stick_to_direction(0.0, 1.0, math.radians(20))
    np.testing.assert_allclose(v, [math.sin(math.radians(20)), 0.0, -math.cos(math.radians(20))], atol=1e-15)
    diag = stick_to_direction(1.0, 1.0, math.radians(20))
    assert math.degrees(math.acos(-diag[2])) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        stick_to_direction(1.5, 0.0, 0.3)


def test_shaper_limits_rate_and_converges():
    shaper = StickShaper(time_constant=0.2, max_rate=0.5)
    target = stick_to_direction(0.0, 1.0, math.radians(30))
    dt = 0.002
    prev = shaper.n.copy()
    for _ in range(3000):
        n, n_dot = shaper.step(target, dt)
        assert np.linalg.norm(n_dot) <= 0.5 + 1e-12
        assert np.linalg.norm(n) == pytest.approx(1.0)
        # the reported derivative matches the finite difference of the state
        np.testing.assert_allclose((n - prev) / dt, n_dot, atol=0.5 * dt * 10)
        prev = n
    np.testing.assert_allclose(n, target, atol=1e-6)
