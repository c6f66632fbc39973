"""Multirotor geometry and control effectiveness.

Rotor ``i`` sits at azimuth ``i * 2*pi/n + upsilon``. Columns of the 4 x n
effectiveness matrix map one unit of squared rotor speed ``u_i = omega_i**2``
to ``(M_roll, M_pitch, M_yaw, F_z)``, where ``F_z`` is the collective thrust
magnitude (positive up).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

GRAVITY = 9.81

AXES = ("roll", "pitch", "yaw", "thrust")
AXIS_INDEX = {name: i for i, name in enumerate(AXES)}
TILT_THRUST_ROWS = (0, 1, 3)

PINV_RCOND = 1e-10


class RankDeficiencyError(ValueError):
    """Remaining rotors cannot span the roll, pitch and thrust rows."""


def _per_rotor(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"{name} must be a scalar or have length {n}, got shape {arr.shape}")
    return arr


def parse_spin_pattern(pattern: str) -> np.ndarray:
    """Convert a layout string such as ``"PPNNPN"`` into +1/-1 spin signs."""
    signs = {"P": 1.0, "N": -1.0}
    try:
        return np.array([signs[c] for c in pattern.upper()])
    except KeyError as exc:
        raise ValueError(f"spin pattern may only contain P and N, got {pattern!r}") from exc


@dataclass(frozen=True, eq=False)
class VehicleConfig:
    n: int
    arm_length_m: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    spin_sign: np.ndarray
    upsilon: float
    omega_min: np.ndarray
    omega_max: np.ndarray
    inertia: np.ndarray
    rotor_inertia_zz: float
    mass: float
    # used by the simulator only
    motor_time_constant: float = 0.03
    yaw_damping: float = 0.0
    name: str = ""

    def __post_init__(self):
        n = int(self.n)
        if n < 3:
            raise ValueError(f"a multirotor needs at least 3 rotors, got n={n}")
        object.__setattr__(self, "n", n)
        spin = self.spin_sign
        if isinstance(spin, str):
            spin = parse_spin_pattern(spin)
        for name, value in (
            ("arm_length_m", self.arm_length_m),
            ("kappa", self.kappa),
            ("tau", self.tau),
            ("spin_sign", spin),
            ("omega_min", self.omega_min),
            ("omega_max", self.omega_max),
        ):
            object.__setattr__(self, name, _per_rotor(value, n, name))
        inertia = np.asarray(self.inertia, dtype=float).reshape(-1)
        if inertia.shape != (3,):
            raise ValueError("inertia must be the diagonal 3-vector (Ixx, Iyy, Izz)")
        object.__setattr__(self, "inertia", inertia)
        for name in ("upsilon", "rotor_inertia_zz", "mass", "motor_time_constant", "yaw_damping"):
            object.__setattr__(self, name, float(getattr(self, name)))
        self._validate()
        for name in ("arm_length_m", "kappa", "tau", "spin_sign", "omega_min", "omega_max", "inertia"):
            getattr(self, name).setflags(write=False)

    def _validate(self):
        arrays = [self.arm_length_m, self.kappa, self.tau, self.spin_sign,
                  self.omega_min, self.omega_max, self.inertia]
        scalars = [self.upsilon, self.rotor_inertia_zz, self.mass,
                   self.motor_time_constant, self.yaw_damping]
        if not all(np.all(np.isfinite(a)) for a in arrays) or not np.all(np.isfinite(scalars)):
            raise ValueError("vehicle coefficients must be finite")
        if np.any(self.kappa <= 0) or np.any(self.tau <= 0):
            raise ValueError("thrust and yaw-moment coefficients must be positive")
        if np.any(np.abs(self.spin_sign) != 1):
            raise ValueError("spin_sign entries must be +1 or -1")
        if np.any(self.omega_min < 0):
            raise ValueError("rotors spin in one direction only: omega_min must be >= 0")
        if np.any(self.omega_max <= self.omega_min):
            raise ValueError("omega_max must exceed omega_min")
        if np.any(self.inertia <= 0) or self.mass <= 0:
            raise ValueError("inertia and mass must be positive")
        if self.rotor_inertia_zz < 0 or self.motor_time_constant < 0 or self.yaw_damping < 0:
            raise ValueError("rotor inertia, motor time constant and yaw damping must be >= 0")

    @property
    def u_min(self) -> np.ndarray:
        return self.omega_min**2

    @property
    def u_max(self) -> np.ndarray:
        return self.omega_max**2

    @property
    def max_total_thrust(self) -> float:
        return float(np.sum(self.kappa * self.u_max))

    @property
    def hover_thrust(self) -> float:
        return self.mass * GRAVITY

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "VehicleConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown vehicle keys: {sorted(unknown)}")
        missing = {"n", "arm_length_m", "kappa", "tau", "spin_sign", "omega_max",
                   "inertia", "mass"} - set(data)
        if missing:
            raise ValueError(f"missing vehicle keys: {sorted(missing)}")
        kwargs = dict(data)
        kwargs.setdefault("upsilon", 0.0)
        kwargs.setdefault("omega_min", 0.0)
        kwargs.setdefault("rotor_inertia_zz", 0.0)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out


def load_vehicle(path: str | Path) -> VehicleConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    cfg = VehicleConfig.from_dict(data)
    if not cfg.name:
        object.__setattr__(cfg, "name", Path(path).stem)
    return cfg


def effectiveness_matrix(config: VehicleConfig) -> np.ndarray:
    """The 4 x n matrix G with rows (M_roll, M_pitch, M_yaw, F_z)."""
    angle = np.arange(config.n) * 2.0 * np.pi / config.n + config.upsilon
    rk = config.arm_length_m * config.kappa
    return np.vstack([
        rk * np.cos(angle),
        rk * np.sin(angle),
        config.spin_sign * config.tau,
        config.kappa,
    ])


def _scaling(config: VehicleConfig) -> np.ndarray:
    return np.concatenate([1.0 / config.inertia, [1.0 / config.mass]])


def _priority_pinv(scaled_G: np.ndarray, healthy: np.ndarray) -> np.ndarray:
    """Right inverse over the healthy columns.

    With full row rank this is the ordinary pseudo-inverse. Otherwise the yaw
    row is dropped and roll, pitch and thrust are inverted exactly; the yaw
    column of the result is zero.
    """
    n = scaled_G.shape[1]
    A = scaled_G[:, healthy]
    out = np.zeros((n, 4))
    if A.shape[1] == 0:
        raise RankDeficiencyError("no healthy rotors left")
    s = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(s > PINV_RCOND * s[0])) if s[0] > 0 else 0
    if rank == 4:
        out[healthy] = np.linalg.pinv(A, rcond=PINV_RCOND)
        return out
    B = A[list(TILT_THRUST_ROWS)]
    sb = np.linalg.svd(B, compute_uv=False)
    if sb[0] == 0 or np.sum(sb > PINV_RCOND * sb[0]) < 3:
        raise RankDeficiencyError(
            "remaining rotors cannot independently produce roll, pitch and thrust")
    block = np.zeros((A.shape[1], 4))
    block[:, list(TILT_THRUST_ROWS)] = np.linalg.pinv(B, rcond=PINV_RCOND)
    out[healthy] = block
    return out


@dataclass(frozen=True, eq=False)
class EffectivenessModel:
    config: VehicleConfig
    G: np.ndarray
    scaled_G: np.ndarray
    pinv_scaled_G: np.ndarray
    failed: frozenset = field(default_factory=frozenset)

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def healthy(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.failed)] = False
        return mask

    @property
    def G_F(self) -> np.ndarray:
        """Force effectiveness, 3 x n; only the z row is populated."""
        out = np.zeros((3, self.n))
        out[2] = self.G[3]
        return out

    @property
    def G_M(self) -> np.ndarray:
        return self.G[:3]

    @property
    def u_lower(self) -> np.ndarray:
        """Per-rotor lower bound on u; failed rotors are pinned to zero."""
        return np.where(self.healthy, self.config.u_min, 0.0)

    @property
    def u_upper(self) -> np.ndarray:
        return np.where(self.healthy, self.config.u_max, 0.0)

    @property
    def max_thrust(self) -> float:
        return float(self.G[3] @ self.u_upper)

    @property
    def min_thrust(self) -> float:
        return float(self.G[3] @ self.u_lower)


def build_effectiveness(config: VehicleConfig) -> EffectivenessModel:
    G = effectiveness_matrix(config)
    if not np.all(np.isfinite(G)):
        raise ValueError("effectiveness matrix is not finite")
    scaled = _scaling(config)[:, None] * G
    healthy = np.ones(config.n, dtype=bool)
    pinv = _priority_pinv(scaled, healthy)
    return EffectivenessModel(config, G, scaled, pinv, frozenset())


def apply_failure(model: EffectivenessModel, rotor_index: int) -> EffectivenessModel:
    """Remove a rotor from the model and recompute the allocation inverse."""
    idx = int(rotor_index)
    if not 0 <= idx < model.n:
        raise IndexError(f"rotor index {idx} out of range for n={model.n}")
    if idx in model.failed:
        raise ValueError(f"rotor {idx} has already failed")
    failed = model.failed | {idx}
    G = model.G.copy()
    G[:, idx] = 0.0
    scaled = model.scaled_G.copy()
    scaled[:, idx] = 0.0
    healthy = np.ones(model.n, dtype=bool)
    healthy[list(failed)] = False
    pinv = _priority_pinv(scaled, healthy)
    return EffectivenessModel(model.config, G, scaled, pinv, frozenset(failed))
