"""Rigid-body multirotor dynamics with first-order rotor lag.

NED inertial frame, body frame x forward, y right, z down. The state carries
``R`` mapping body vectors into the inertial frame.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .vehicle import GRAVITY, VehicleConfig, effectiveness_matrix

MAX_DT = 0.01
GRAVITY_VEC = np.array([0.0, 0.0, GRAVITY])


class DivergenceError(RuntimeError):
    """State became non-finite during integration."""


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors; much cheaper than np.cross for one pair."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def rotation_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-inertial rotation for ZYX Euler angles."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    return Rz @ Ry @ Rx


def tilt_angle(R: np.ndarray) -> float:
    """Angle between the body thrust axis and straight up."""
    return float(np.arccos(np.clip(R[2, 2], -1.0, 1.0)))


@dataclass(frozen=True)
class StateVector:
    dcm_inertial_from_body: np.ndarray
    omega: np.ndarray
    velocity: np.ndarray
    position: np.ndarray
    rotor_speed: np.ndarray

    @classmethod
    def hover(cls, config: VehicleConfig, R=None) -> "StateVector":
        """Level (or given attitude) at rest with every rotor at hover speed."""
        w = np.sqrt(config.hover_thrust / np.sum(config.kappa))
        return cls(np.eye(3) if R is None else np.asarray(R, dtype=float),
                   np.zeros(3), np.zeros(3), np.zeros(3), np.full(config.n, w))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in
                   (self.dcm_inertial_from_body, self.omega, self.velocity,
                    self.position, self.rotor_speed))


@dataclass(frozen=True)
class StateDerivative:
    R_dot: np.ndarray
    omega_dot: np.ndarray
    acceleration: np.ndarray
    velocity: np.ndarray
    rotor_accel: np.ndarray
    moment: np.ndarray
    thrust: float


class RigidBodyModel:
    """Precomputed geometry so the integrator avoids rebuilding G each call."""

    def __init__(self, config: VehicleConfig):
        self.config = config
        G = effectiveness_matrix(config)
        self.G_M = G[:3]
        self.kappa = G[3]
        self.inertia = config.inertia
        self.spin = config.spin_sign
        self.omega_max = config.omega_max

    def rotor_target(self, u_cmd, dead=()) -> np.ndarray:
        w = np.sqrt(np.clip(np.asarray(u_cmd, dtype=float), 0.0, None))
        w = np.minimum(w, self.omega_max)
        if len(dead):
            w[list(dead)] = 0.0
        return w

    def derivative(self, R, omega, velocity, rotor, target) -> StateDerivative:
        cfg = self.config
        if cfg.motor_time_constant > 0:
            rotor_accel = (target - rotor) / cfg.motor_time_constant
        else:
            rotor_accel = np.zeros_like(rotor)
        u = rotor * rotor
        Ir = cfg.rotor_inertia_zz
        # rotor reaction: gyroscopic coupling and spin-up torque
        h = Ir * float(self.spin @ rotor)
        react = np.array([omega[1] * h, -omega[0] * h, Ir * float(self.spin @ rotor_accel)])
        moment = self.G_M @ u + react
        moment[2] -= cfg.yaw_damping * omega[2]
        I = self.inertia
        omega_dot = (moment - cross3(omega, I * omega)) / I
        thrust = float(self.kappa @ u)
        acc = R[:, 2] * (-thrust / cfg.mass) + GRAVITY_VEC
        return StateDerivative(R @ skew(omega), omega_dot, acc, velocity, rotor_accel, moment, thrust)


def _rk4(model: RigidBodyModel, s: StateVector, target, dt):
    def f(R, w, v, rot):
        return model.derivative(R, w, v, rot, target)

    R0, w0, v0, p0, r0 = (s.dcm_inertial_from_body, s.omega, s.velocity, s.position, s.rotor_speed)
    k1 = f(R0, w0, v0, r0)
    k2 = f(R0 + 0.5 * dt * k1.R_dot, w0 + 0.5 * dt * k1.omega_dot,
           v0 + 0.5 * dt * k1.acceleration, r0 + 0.5 * dt * k1.rotor_accel)
    k3 = f(R0 + 0.5 * dt * k2.R_dot, w0 + 0.5 * dt * k2.omega_dot,
           v0 + 0.5 * dt * k2.acceleration, r0 + 0.5 * dt * k2.rotor_accel)
    k4 = f(R0 + dt * k3.R_dot, w0 + dt * k3.omega_dot,
           v0 + dt * k3.acceleration, r0 + dt * k3.rotor_accel)

    def comb(a, b, c, d):
        return (a + 2 * b + 2 * c + d) * (dt / 6.0)

    R = R0 + comb(k1.R_dot, k2.R_dot, k3.R_dot, k4.R_dot)
    w = w0 + comb(k1.omega_dot, k2.omega_dot, k3.omega_dot, k4.omega_dot)
    v = v0 + comb(k1.acceleration, k2.acceleration, k3.acceleration, k4.acceleration)
    p = p0 + comb(k1.velocity, k2.velocity, k3.velocity, k4.velocity)
    rot = r0 + comb(k1.rotor_accel, k2.rotor_accel, k3.rotor_accel, k4.rotor_accel)
    return R, w, v, p, rot


def step_dynamics(state: StateVector, u_cmd, dt: float, config: VehicleConfig | RigidBodyModel,
                  dead_rotors=()) -> StateVector:
    """Advance one RK4 step. ``u_cmd`` is squared rotor speed per rotor.

    Rotors in ``dead_rotors`` are driven to zero regardless of the command.
    """
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}] s")
    model = config if isinstance(config, RigidBodyModel) else RigidBodyModel(config)
    u = getattr(u_cmd, "u", u_cmd)
    target = model.rotor_target(u, dead_rotors)
    if model.config.motor_time_constant == 0:
        state = replace(state, rotor_speed=target)
    R, w, v, p, rot = _rk4(model, state, target, dt)
    rot = np.clip(rot, 0.0, model.omega_max)
    out = StateVector(orthonormalize(R), w, v, p, rot)
    if not out.is_finite():
        raise DivergenceError("non-finite state after integration step")
    return out


def state_derivative(state: StateVector, u_cmd, config: VehicleConfig | RigidBodyModel,
                     dead_rotors=()) -> StateDerivative:
    model = config if isinstance(config, RigidBodyModel) else RigidBodyModel(config)
    u = getattr(u_cmd, "u", u_cmd)
    target = model.rotor_target(u, dead_rotors)
    rotor = target if model.config.motor_time_constant == 0 else state.rotor_speed
    return model.derivative(state.dcm_inertial_from_body, state.omega, state.velocity, rotor, target)
