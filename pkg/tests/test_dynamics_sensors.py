import math
from dataclasses import replace

import numpy as np
import pytest

from multirotor_ftc.dynamics import (GRAVITY_VEC, RigidBodyModel, StateVector, rotation_from_euler,
                                     state_derivative, step_dynamics, tilt_angle)
from multirotor_ftc.sensors import ComplementaryFilter, ImuModel, SensorFrame, sample_imu, specific_force
from multirotor_ftc.vehicle import GRAVITY


def hover_u(cfg):
    return np.full(cfg.n, cfg.hover_thrust / np.sum(cfg.kappa))


def test_hover_is_an_equilibrium(quad_si):
    s = StateVector.hover(quad_si)
    d = state_derivative(s, hover_u(quad_si), quad_si)
    assert np.abs(d.acceleration).max() < 1e-9
    assert np.abs(d.omega_dot).max() < 1e-9
    after = step_dynamics(s, hover_u(quad_si), 0.001, quad_si)
    assert np.abs(after.velocity).max() < 1e-9


def test_rotors_off_is_free_fall(quad_si):
    cfg = replace(quad_si, motor_time_constant=0.0)
    s = StateVector.hover(cfg, R=rotation_from_euler(0.3, -0.2, 1.0))
    d = state_derivative(s, np.zeros(4), cfg)
    np.testing.assert_allclose(d.acceleration, GRAVITY_VEC, atol=1e-12)
    frame = sample_imu(s, d, ImuModel(), None)
    np.testing.assert_allclose(frame.accel, 0.0, atol=1e-12)


def test_faster_positive_rotor_yaws_positive(quad_si):
    cfg = replace(quad_si, motor_time_constant=0.0, yaw_damping=0.0)
    u = hover_u(cfg)
    u[0] *= 1.2  # rotor 0 spins in the positive sense
    d = state_derivative(StateVector.hover(cfg), u, cfg)
    assert d.omega_dot[2] > 0
    assert d.moment[2] == pytest.approx(cfg.tau[0] * 0.2 * u[0] / 1.2)


def test_spin_up_reaction_follows_drag_torque(quad_si):
    cfg = replace(quad_si, yaw_damping=0.0)
    s = StateVector.hover(cfg)
    u = hover_u(cfg)
    u[0] *= 1.5
    d = state_derivative(s, u, cfg)
    # the motor's reaction while accelerating adds to the yaw produced at higher speed
    assert d.rotor_accel[0] > 0 and d.moment[2] > 0


def test_torque_free_tumble_conserves_angular_momentum(quad_si):
    cfg = replace(quad_si, rotor_inertia_zz=0.0, yaw_damping=0.0, motor_time_constant=0.0,
                  inertia=[0.002, 0.003, 0.005])
    model = RigidBodyModel(cfg)
    s = replace(StateVector.hover(cfg), omega=np.array([1.0, 0.5, 3.0]))
    L0 = s.dcm_inertial_from_body @ (cfg.inertia * s.omega)
    dt, T = 0.001, 5.0
    for _ in range(int(T / dt)):
        s = step_dynamics(s, np.zeros(4), dt, model)
    L = s.dcm_inertial_from_body @ (cfg.inertia * s.omega)
    assert np.linalg.norm(L - L0) / np.linalg.norm(L0) / T < 1e-6


def test_attitude_stays_orthonormal_over_long_runs(quad_si):
    model = RigidBodyModel(quad_si)
    s = replace(StateVector.hover(quad_si), omega=np.array([0.3, -0.2, 20.0]))
    u = hover_u(quad_si)
    for _ in range(12_000):
        s = step_dynamics(s, u, 0.01, model)
    R = s.dcm_inertial_from_body
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-12
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("dt", [0.0, -0.001, 0.02])
def test_step_rejects_bad_dt(quad_si, dt):
    with pytest.raises(ValueError):
        step_dynamics(StateVector.hover(quad_si), hover_u(quad_si), dt, quad_si)


def test_dead_rotor_has_no_thrust(quad_si):
    cfg = replace(quad_si, motor_time_constant=0.0)
    d = state_derivative(StateVector.hover(cfg), hover_u(cfg), cfg, dead_rotors=[2])
    assert d.thrust == pytest.approx(0.75 * cfg.hover_thrust)


def test_tilt_angle_of_rolled_body():
    assert tilt_angle(rotation_from_euler(0.2, 0.0, 1.3)) == pytest.approx(0.2)


def test_spinning_offset_imu_sees_centripetal_acceleration(quad_si):
    cfg = replace(quad_si, motor_time_constant=0.0, yaw_damping=0.0)
    s = replace(StateVector.hover(cfg), omega=np.array([0.0, 0.0, 20.0]))
    d = state_derivative(s, hover_u(cfg), cfg)
    level = sample_imu(s, d, ImuModel(), None)
    offset = sample_imu(s, d, ImuModel(lever_arm=[0.05, 0.0, 0.0]), None)
    np.testing.assert_allclose(offset.accel - level.accel, [-20.0, 0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(level.accel, [0.0, 0.0, -GRAVITY], atol=1e-9)


def test_angular_acceleration_term_in_imu(quad_si):
    s = StateVector.hover(quad_si)
    d = replace(state_derivative(s, hover_u(quad_si), quad_si), omega_dot=np.array([0.0, 0.0, 10.0]))
    frame = sample_imu(s, d, ImuModel(lever_arm=[0.1, 0.0, 0.0]), None)
    np.testing.assert_allclose(frame.accel, [0.0, 1.0, -GRAVITY], atol=1e-9)
    np.testing.assert_allclose(specific_force(s, d), [0.0, 0.0, -GRAVITY], atol=1e-9)


def test_imu_noise_is_reproducible(quad_si):
    s = StateVector.hover(quad_si)
    d = state_derivative(s, hover_u(quad_si), quad_si)
    model = ImuModel(gyro_noise_sd=0.01, accel_noise_sd=0.1)
    a = sample_imu(s, d, model, np.random.default_rng(7))
    b = sample_imu(s, d, model, np.random.default_rng(7))
    np.testing.assert_array_equal(a.accel, b.accel)
    assert not np.allclose(a.accel, [0, 0, -GRAVITY])
    with pytest.raises(ValueError):
        ImuModel(sample_rate=0.0)


def level_frame(t, R_true=np.eye(3), gyro=np.zeros(3)):
    return SensorFrame(np.asarray(gyro, dtype=float), R_true.T @ np.array([0.0, 0.0, -GRAVITY]), t)


def test_filter_converges_on_static_readings():
    f = ComplementaryFilter(time_constant=0.5, R0=rotation_from_euler(math.radians(10), 0.0, 0.0))
    for k in range(2500):
        f.update(level_frame(k * 0.002), dt=0.002)
    assert tilt_angle(f.R) < math.radians(0.01)
    assert f.acceptance_rate == 1.0


def test_filter_ignores_readings_outside_the_gate():
    f = ComplementaryFilter(time_constant=0.5, R0=rotation_from_euler(0.1, 0.0, 0.0))
    for k in range(500):
        f.update(SensorFrame(np.zeros(3), np.array([0.0, 0.0, -1.5 * GRAVITY]), k * 0.002), dt=0.002)
        assert not f.last_accepted
    assert tilt_angle(f.R) == pytest.approx(0.1, abs=1e-12)
    assert f.acceptance_rate == 0.0


def test_calibrated_filter_accepts_spinning_offset_imu():
    r_v = np.array([0.03, 0.02, 0.0])
    gyro = np.array([0.0, 0.0, 20.0])
    accel = np.array([0.0, 0.0, -GRAVITY]) + np.cross(gyro, np.cross(gyro, r_v))
    frame = SensorFrame(gyro, accel, 0.0)
    raw = ComplementaryFilter(gate_fraction=0.1)
    raw.update(frame)
    fixed = ComplementaryFilter(gate_fraction=0.1, calibrated=True, lever_arm=r_v)
    fixed.update(frame)
    assert not raw.last_accepted and fixed.last_accepted
    np.testing.assert_allclose(fixed.corrected_accel(frame), [0.0, 0.0, -GRAVITY], atol=1e-12)


def test_filter_propagates_gyro():
    f = ComplementaryFilter(gate_fraction=0.0)
    for k in range(1, 501):
        f.update(SensorFrame(np.array([0.2, 0.0, 0.0]), np.array([5.0, 0, 0]), k * 0.002))
    assert tilt_angle(f.R) == pytest.approx(0.2 * 0.998, rel=1e-9)
