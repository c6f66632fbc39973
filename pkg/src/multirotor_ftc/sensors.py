"""IMU model and the gravity-gated complementary attitude filter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import GRAVITY_VEC, StateDerivative, StateVector, cross3, orthonormalize, skew
from .imu_calibration import predict_lever_accel
from .vehicle import GRAVITY


@dataclass(frozen=True)
class ImuModel:
    lever_arm: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gyro_noise_sd: float = 0.0
    accel_noise_sd: float = 0.0
    sample_rate: float = 500.0

    def __post_init__(self):
        for name in ("lever_arm", "gyro_bias", "accel_bias"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.gyro_noise_sd < 0 or self.accel_noise_sd < 0:
            raise ValueError("noise standard deviations must be >= 0")

    @classmethod
    def from_dict(cls, data) -> "ImuModel":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown imu keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SensorFrame:
    gyro: np.ndarray
    accel: np.ndarray
    timestamp: float


def specific_force(state: StateVector, state_dot: StateDerivative) -> np.ndarray:
    """Accelerometer reading at the centre of rotation, in body axes."""
    R = state.dcm_inertial_from_body
    return R.T @ (state_dot.acceleration - GRAVITY_VEC)


def sample_imu(state: StateVector, state_dot: StateDerivative, model: ImuModel,
               rng: np.random.Generator | None, timestamp: float = 0.0) -> SensorFrame:
    accel = specific_force(state, state_dot)
    accel = accel + predict_lever_accel(state.omega, state_dot.omega_dot, model.lever_arm)
    accel = accel + model.accel_bias
    gyro = state.omega + model.gyro_bias
    if rng is not None:
        if model.accel_noise_sd > 0:
            accel = accel + rng.normal(0.0, model.accel_noise_sd, 3)
        if model.gyro_noise_sd > 0:
            gyro = gyro + rng.normal(0.0, model.gyro_noise_sd, 3)
    return SensorFrame(gyro, accel, float(timestamp))


def _expm_so3(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    K = skew(w)
    if angle < 1e-9:
        return np.eye(3) + K
    return (np.eye(3) + math.sin(angle) / angle * K
            + (1.0 - math.cos(angle)) / angle**2 * K @ K)


class ComplementaryFilter:
    """Attitude estimate on SO(3) from gyro integration plus gated accel tilt.

    The accelerometer is trusted only while its magnitude is within
    ``gate_fraction`` of 1 g. With ``calibrated`` set and a lever arm known,
    the predicted lever-arm acceleration is removed before the gate test.
    """

    def __init__(self, time_constant: float = 1.0, gate_fraction: float = 0.1,
                 calibrated: bool = False, lever_arm=None, R0=None):
        if time_constant <= 0:
            raise ValueError("time_constant must be positive")
        self.gain = 1.0 / time_constant
        self.gate_fraction = gate_fraction
        self.calibrated = calibrated
        self.lever_arm = np.zeros(3) if lever_arm is None else np.asarray(lever_arm, dtype=float)
        self.R = np.eye(3) if R0 is None else orthonormalize(np.asarray(R0, dtype=float))
        self.samples = 0
        self.accepted = 0
        self.last_accepted = False
        self._last_gyro = None
        self._last_time = None
        self.omega_dot = np.zeros(3)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.samples if self.samples else 0.0

    def corrected_accel(self, frame: SensorFrame) -> np.ndarray:
        if not self.calibrated:
            return frame.accel
        return frame.accel - predict_lever_accel(frame.gyro, self.omega_dot, self.lever_arm)

    def update(self, frame: SensorFrame, dt: float | None = None) -> np.ndarray:
        if dt is None:
            dt = 0.0 if self._last_time is None else frame.timestamp - self._last_time
        if self._last_gyro is not None and dt > 0:
            raw = (frame.gyro - self._last_gyro) / dt
            # light smoothing of the differentiated gyro
            self.omega_dot += 0.2 * (raw - self.omega_dot)
        self._last_gyro = frame.gyro.copy()
        self._last_time = frame.timestamp

        accel = self.corrected_accel(frame)
        self.samples += 1
        correction = np.zeros(3)
        norm = float(np.linalg.norm(accel))
        self.last_accepted = abs(norm - GRAVITY) <= self.gate_fraction * GRAVITY
        if self.last_accepted:
            self.accepted += 1
            down_meas = -accel / norm
            down_est = self.R.T @ np.array([0.0, 0.0, 1.0])
            correction = self.gain * cross3(down_meas, down_est)
        if dt > 0:
            self.R = orthonormalize(self.R @ _expm_so3((frame.gyro + correction) * dt))
        return self.R


def complementary_filter(prev: ComplementaryFilter, frame: SensorFrame, calibrated: bool | None = None):
    """Functional wrapper: update ``prev`` in place and return the estimate."""
    if calibrated is not None:
        prev.calibrated = calibrated
    return prev.update(frame)
