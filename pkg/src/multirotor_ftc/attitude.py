"""Reduced attitude control on the unit sphere of thrust directions.

Only the direction of the body thrust axis ``n^B = (0, 0, -1)`` is controlled;
yaw angle is left free, which is what keeps the loop usable while a damaged
vehicle spins. Frames are NED, body z down.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

THRUST_AXIS_BODY = np.array([0.0, 0.0, -1.0])
H3_MIN = 0.2


@dataclass(frozen=True)
class RateGains:
    k1: float = 8.0
    k2: float = 8.0
    Kp_p: float = 30.0
    Kp_q: float = 30.0
    Kd_p: float = 0.0
    Kd_q: float = 0.0
    Kff_p: float = 0.0
    Kff_q: float = 0.0
    # yaw-rate loop used while the vehicle is healthy
    Kp_r: float = 5.0

    def __post_init__(self):
        vals = [getattr(self, f) for f in self.__dataclass_fields__]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("gains must be finite")
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("tilt gains k1 and k2 must be positive")

    @classmethod
    def from_dict(cls, data) -> "RateGains":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown gain keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class ReducedAttitudeState:
    n_body_des: np.ndarray
    n_inertial_des: np.ndarray
    yaw_rate: float
    dcm_body_from_inertial: np.ndarray

    @classmethod
    def from_estimate(cls, dcm_body_from_inertial, n_inertial_des, yaw_rate) -> "ReducedAttitudeState":
        R = np.asarray(dcm_body_from_inertial, dtype=float)
        n_i = np.asarray(n_inertial_des, dtype=float)
        n_i = n_i / np.linalg.norm(n_i)
        h = R @ n_i
        return cls(h / np.linalg.norm(h), n_i, float(yaw_rate), R)


class TiltRates(NamedTuple):
    p_des: float
    q_des: float
    guarded: bool


def tilt_controller(state: ReducedAttitudeState, gains: RateGains,
                    n_inertial_des_dot=(0.0, 0.0, 0.0), h3_min: float = H3_MIN) -> TiltRates:
    """Body roll/pitch rate setpoints that steer the thrust axis onto ``h``.

    Inverts ``h1_dot = -h3 q + h2 r + nd1`` and ``h2_dot = h3 p - h1 r + nd2``
    for a first-order approach ``h_dot = k (n^B - h)`` in the x and y components.
    """
    h1, h2, h3 = state.n_body_des
    r = state.yaw_rate
    nd = state.dcm_body_from_inertial @ np.asarray(n_inertial_des_dot, dtype=float)
    nu = np.array([
        gains.k1 * (THRUST_AXIS_BODY[0] - h1),
        gains.k2 * (THRUST_AXIS_BODY[1] - h2),
    ])
    guarded = abs(h3) < h3_min
    if guarded:
        h3 = math.copysign(h3_min, h3) if h3 != 0.0 else -h3_min
    rhs = nu - np.array([h2, -h1]) * r - nd[:2]
    p_des = rhs[1] / h3
    q_des = -rhs[0] / h3
    return TiltRates(float(p_des), float(q_des), guarded)


def rate_controller(p_est, q_est, p_des, q_des, p_dot_meas, q_dot_meas, gains: RateGains):
    """Angular-acceleration demands from rate errors; no integral state."""
    p_dot = gains.Kp_p * (p_des - p_est) + gains.Kd_p * p_dot_meas + gains.Kff_p * p_des
    q_dot = gains.Kp_q * (q_des - q_est) + gains.Kd_q * q_dot_meas + gains.Kff_q * q_des
    return float(p_dot), float(q_dot)


def stick_to_direction(roll_stick: float, pitch_stick: float, max_tilt: float) -> np.ndarray:
    """Desired inertial thrust direction for the given stick deflections.

    Pitch stick tilts the thrust toward inertial +x, roll stick toward +y.
    The deflection vector is capped at unit length, so diagonals never exceed
    ``max_tilt``.
    """
    if not (-1.0 <= roll_stick <= 1.0 and -1.0 <= pitch_stick <= 1.0):
        raise ValueError("stick inputs must lie in [-1, 1]")
    if not 0.0 <= max_tilt < math.pi / 2:
        raise ValueError("max_tilt must lie in [0, pi/2)")
    defl = np.array([pitch_stick, roll_stick])
    mag = float(np.linalg.norm(defl))
    if mag == 0.0:
        return THRUST_AXIS_BODY.copy()
    tilt = max_tilt * min(mag, 1.0)
    horiz = defl / mag * math.sin(tilt)
    return np.array([horiz[0], horiz[1], -math.cos(tilt)])


class StickShaper:
    """First-order lag on the desired direction with a bound on its rate.

    ``step`` returns the filtered direction and its analytic time derivative,
    so no finite differencing of the reference is needed downstream.
    """

    def __init__(self, time_constant: float = 0.3, max_rate: float = 1.0,
                 initial=THRUST_AXIS_BODY):
        if time_constant <= 0 or max_rate <= 0:
            raise ValueError("time constant and rate bound must be positive")
        self.time_constant = time_constant
        self.max_rate = max_rate
        self.n = np.asarray(initial, dtype=float) / np.linalg.norm(initial)
        self.n_dot = np.zeros(3)

    def rate(self, target) -> np.ndarray:
        err = np.asarray(target, dtype=float) - self.n
        err -= (err @ self.n) * self.n  # stay tangent to the sphere
        rate = err / self.time_constant
        speed = np.linalg.norm(rate)
        if speed > self.max_rate:
            rate *= self.max_rate / speed
        return rate

    def step(self, target, dt: float):
        self.n_dot = self.rate(target)
        n = self.n + self.n_dot * dt
        self.n = n / np.linalg.norm(n)
        return self.n.copy(), self.n_dot.copy()
