"""Closed-loop scenario runner: controller, estimator, IMU and rigid body.

Physics runs at ``physics_rate_hz`` with RK4; the controller, IMU sampling
and logging run at ``control_rate_hz``. A run is deterministic for a seed.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time as _time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as bundled
from .allocation import ControlDemand, allocate, clamp_demand_to_avcs
from .attitude import RateGains, ReducedAttitudeState, StickShaper, rate_controller, \
    stick_to_direction, tilt_controller
from .avcs import build_avcs
from .dynamics import DivergenceError, RigidBodyModel, StateVector, rotation_from_euler, \
    state_derivative, step_dynamics, tilt_angle
from .sensors import ComplementaryFilter, ImuModel, sample_imu
from .vehicle import AXES, GRAVITY, VehicleConfig, apply_failure, build_effectiveness, load_vehicle


@dataclass
class FailureEvent:
    time: float
    rotor: int
    detection_delay: float = 0.0


@dataclass
class ScenarioSpec:
    vehicle: VehicleConfig
    duration: float
    seed: int = 0
    name: str = ""
    kind: str = "flight"
    gains: RateGains = field(default_factory=RateGains)
    failures: list = field(default_factory=list)
    sticks: list = field(default_factory=list)          # [t, roll, pitch], held piecewise constant
    max_tilt: float = math.radians(20.0)
    stick_time_constant: float = 0.3
    stick_max_rate: float = 1.0
    imu: ImuModel = field(default_factory=ImuModel)
    estimator: dict = field(default_factory=dict)
    altitude_gains: tuple = (4.0, 4.0)                  # (kp on height error, kd on vertical speed)
    initial_tilt: tuple = (0.0, 0.0)                    # roll, pitch (rad)
    initial_yaw: float = 0.0
    physics_rate_hz: float = 1000.0
    control_rate_hz: float = 500.0
    log_rate_hz: Optional[float] = None
    excitation: dict = field(default_factory=dict)
    clamp_to_avcs: bool = False
    ground_spin: dict = field(default_factory=dict)
    pilot: dict = field(default_factory=dict)           # {"kp", "kd"}: position-holding pilot
    output: Optional[str] = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        for ev in self.failures:
            if not 0 <= ev.rotor < self.vehicle.n:
                raise ValueError(f"failure rotor {ev.rotor} out of range")
            if not 0 <= ev.time <= self.duration:
                raise ValueError("failure time must lie within the run")


_SCENARIO_KEYS = {
    "name", "kind", "vehicle", "duration", "seed", "gains", "failures", "sticks", "max_tilt_deg",
    "stick_time_constant", "stick_max_rate", "imu", "estimator", "altitude_gains",
    "initial_tilt_deg", "initial_yaw_deg", "physics_rate_hz", "control_rate_hz", "log_rate_hz",
    "excitation", "clamp_to_avcs", "ground_spin", "output", "vehicle_overrides", "pilot",
}


def _resolve_vehicle(ref, base: Optional[Path]) -> VehicleConfig:
    if isinstance(ref, dict):
        return VehicleConfig.from_dict(ref)
    path = Path(ref)
    if not path.suffix:
        return bundled.vehicle(str(ref))
    if base is not None and not path.is_absolute():
        candidate = base / path
        if candidate.exists():
            path = candidate
    if not path.exists():
        raise FileNotFoundError(f"vehicle file not found: {ref}")
    return load_vehicle(path)


def scenario_from_dict(data: dict, base: Optional[Path] = None) -> ScenarioSpec:
    unknown = set(data) - _SCENARIO_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    if "vehicle" not in data or "duration" not in data:
        raise ValueError("scenario needs 'vehicle' and 'duration'")
    veh = _resolve_vehicle(data["vehicle"], base)
    if data.get("vehicle_overrides"):
        veh = VehicleConfig.from_dict({**veh.to_dict(), **data["vehicle_overrides"]})
    fails = [FailureEvent(float(f["time"]), int(f["rotor"]), float(f.get("detection_delay", 0.0)))
             for f in data.get("failures", [])]
    tilt = data.get("initial_tilt_deg", (0.0, 0.0))
    return ScenarioSpec(
        vehicle=veh,
        duration=float(data["duration"]),
        seed=int(data.get("seed", 0)),
        name=str(data.get("name", "")),
        kind=str(data.get("kind", "flight")),
        gains=RateGains.from_dict(data.get("gains", {})),
        failures=fails,
        sticks=[tuple(map(float, s)) for s in data.get("sticks", [])],
        max_tilt=math.radians(float(data.get("max_tilt_deg", 20.0))),
        stick_time_constant=float(data.get("stick_time_constant", 0.3)),
        stick_max_rate=float(data.get("stick_max_rate", 1.0)),
        imu=ImuModel.from_dict(data.get("imu", {})),
        estimator=dict(data.get("estimator", {})),
        altitude_gains=tuple(data.get("altitude_gains", (4.0, 4.0))),
        initial_tilt=tuple(math.radians(a) for a in tilt),
        initial_yaw=math.radians(float(data.get("initial_yaw_deg", 0.0))),
        physics_rate_hz=float(data.get("physics_rate_hz", 1000.0)),
        control_rate_hz=float(data.get("control_rate_hz", 500.0)),
        log_rate_hz=data.get("log_rate_hz"),
        excitation=dict(data.get("excitation", {})),
        clamp_to_avcs=bool(data.get("clamp_to_avcs", False)),
        ground_spin=dict(data.get("ground_spin", {})),
        pilot=dict(data.get("pilot", {})),
        output=data.get("output"),
    )


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    if not path.suffix:
        data = bundled.scenario_dict(str(path))
        return scenario_from_dict(data, None)
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return scenario_from_dict(data, path.parent)


# --- the closed loop --------------------------------------------------------------------

def _stick_at(sticks, t):
    roll = pitch = 0.0
    for ts, r, p in sticks:
        if ts <= t:
            roll, pitch = r, p
        else:
            break
    return roll, pitch


def _excitation(spec: dict, t: float) -> np.ndarray:
    """Sum-of-sines perturbation of the scaled demand, one distinct set per axis."""
    if not spec:
        return np.zeros(4)
    amp = np.asarray(spec.get("amplitude", [0.0, 0.0, 0.0, 0.0]), dtype=float)
    start = float(spec.get("start", 0.0))
    if t < start:
        return np.zeros(4)
    base = float(spec.get("base_frequency_hz", 0.7))
    out = np.zeros(4)
    for axis in range(4):
        for k in range(4):
            f = base * (1 + axis + 4 * k) * 1.13
            out[axis] += math.sin(2 * math.pi * f * (t - start) + 0.7 * axis * (k + 1)) / 4.0
    return amp * out


class Simulation:
    """Holds every mutable piece of one run."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        cfg = spec.vehicle
        self.body = RigidBodyModel(cfg)
        self.model = build_effectiveness(cfg)
        self.rng = np.random.default_rng(spec.seed)
        R0 = rotation_from_euler(spec.initial_tilt[0], spec.initial_tilt[1], spec.initial_yaw)
        self.state = StateVector.hover(cfg, R0)
        est = spec.estimator
        self.filter = ComplementaryFilter(
            time_constant=float(est.get("time_constant", 1.0)),
            gate_fraction=float(est.get("gate_fraction", 0.1)),
            calibrated=bool(est.get("calibrated", False)),
            lever_arm=est.get("lever_arm"),
            R0=R0 if est.get("start_aligned", True) else np.eye(3),
        )
        self.use_truth = bool(est.get("use_truth", False))
        self.shaper = StickShaper(spec.stick_time_constant, spec.stick_max_rate)
        self.dead: set = set()
        self.pending = sorted(spec.failures, key=lambda f: f.time)
        self.u = np.full(cfg.n, cfg.hover_thrust / np.sum(cfg.kappa))
        self.time = 0.0
        self.z_ref = 0.0
        self.avcs = build_avcs(self.model) if spec.clamp_to_avcs else None
        self.saturation_counts = {a: 0 for a in AXES}
        self.tilt_unmet_count = 0
        self.guard_count = 0
        self.lp_rescues = 0

    # -- failure handling
    def inject_failure(self, rotor: int, time: float, detection_delay: float = 0.0):
        self.pending.append(FailureEvent(time, rotor, detection_delay))
        self.pending.sort(key=lambda f: f.time)

    def _apply_events(self, t):
        for ev in self.pending:
            if ev.time <= t + 1e-12 and ev.rotor not in self.dead:
                self.dead.add(ev.rotor)
            if ev.time + ev.detection_delay <= t + 1e-12 and ev.rotor not in self.model.failed:
                self.model = apply_failure(self.model, ev.rotor)
                if self.avcs is not None:
                    self.avcs = build_avcs(self.model)

    # -- one controller tick
    def control(self, dt_ctrl: float) -> dict:
        spec = self.spec
        s = self.state
        sdot = state_derivative(s, self.u, self.body, tuple(self.dead))
        frame = sample_imu(s, sdot, spec.imu, self.rng, self.time)
        R_hat = self.filter.update(frame, dt_ctrl)
        if self.use_truth:
            R_hat = s.dcm_inertial_from_body
        roll_s, pitch_s = _stick_at(spec.sticks, self.time)
        if spec.pilot:
            roll_s, pitch_s = self._pilot(roll_s, pitch_s)
        target = stick_to_direction(roll_s, pitch_s, spec.max_tilt)
        n_i, n_i_dot = self.shaper.step(target, dt_ctrl)
        att = ReducedAttitudeState.from_estimate(R_hat.T, n_i, frame.gyro[2])
        tilt = tilt_controller(att, spec.gains, n_i_dot)
        g = spec.gains
        p_dot, q_dot = rate_controller(frame.gyro[0], frame.gyro[1], tilt.p_des, tilt.q_des,
                                       self.filter.omega_dot[0], self.filter.omega_dot[1], g)
        r_dot = -g.Kp_r * frame.gyro[2]
        kp, kd = spec.altitude_gains
        up = GRAVITY + kp * (s.position[2] - self.z_ref) + kd * s.velocity[2]
        axis_up = max(-(R_hat @ np.array([0.0, 0.0, -1.0]))[2], 0.5)
        vec = np.array([p_dot, q_dot, r_dot, up / axis_up]) + _excitation(spec.excitation, self.time)
        demand = ControlDemand.from_vector(vec)
        if self.avcs is not None:
            demand = clamp_demand_to_avcs(demand, self.avcs)
        cmd = allocate(self.model, demand)
        u = cmd.u.copy()
        self.u = u
        for a in cmd.saturated_axes:
            self.saturation_counts[a] += 1
        self.tilt_unmet_count += cmd.tilt_unmet
        self.guard_count += tilt.guarded
        self.lp_rescues += cmd.lp_rescue
        return {
            "frame": frame, "R_hat": R_hat, "n_des": n_i, "tilt": tilt,
            "demand": vec, "cmd": cmd,
        }

    def _pilot(self, roll_s, pitch_s):
        """Stand-in for a human pilot who watches the vehicle and holds position.

        Works from the true horizontal position and velocity, as a pilot's eyes
        would, and adds its stick deflection to the scripted trace.
        """
        p = self.spec.pilot
        s = self.state
        acc = -float(p.get("kp", 0.3)) * s.position[:2] - float(p.get("kd", 0.8)) * s.velocity[:2]
        full = GRAVITY * math.tan(self.spec.max_tilt) if self.spec.max_tilt > 0 else 1.0
        pitch_s = float(np.clip(pitch_s + acc[0] / full, -1.0, 1.0))
        roll_s = float(np.clip(roll_s + acc[1] / full, -1.0, 1.0))
        return roll_s, pitch_s

    def physics(self, dt: float):
        self.state = step_dynamics(self.state, self.u, dt, self.body, tuple(self.dead))


LOG_FLOAT_FMT = "{:.9g}"
TRACE_WINDOW = 2.0  # seconds of thrust-axis trace used for the circle fit


def _log_header(n: int) -> list:
    cols = ["time", "x", "y", "z", "vx", "vy", "vz", "p", "q", "r",
            "thrust_axis_x", "thrust_axis_y", "thrust_axis_z", "tilt_deg", "tilt_est_deg",
            "tilt_error_deg", "n_des_x", "n_des_y", "n_des_z", "p_des", "q_des",
            "p_dot_des", "q_dot_des", "r_dot_des", "specific_thrust_des"]
    cols += [f"u_{i}" for i in range(n)] + [f"omega_{i}" for i in range(n)]
    cols += ["gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "accel_z",
             "gate_rate", "accel_gated", "saturated_axes", "tilt_unmet", "h3_guard", "dead_rotors", "model_failed"]
    return cols


@dataclass
class SimResult:
    columns: list
    rows: list
    summary: dict
    runtime: float = 0.0

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([float(r[j]) for r in self.rows])

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([LOG_FLOAT_FMT.format(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def run_scenario(spec: ScenarioSpec) -> SimResult:
    if spec.kind == "ground_spin":
        return run_ground_spin(spec)
    if spec.kind != "flight":
        raise ValueError(f"unknown scenario kind {spec.kind!r}")
    started = _time.perf_counter()
    sim = Simulation(spec)
    dt = 1.0 / spec.physics_rate_hz
    sub = int(round(spec.physics_rate_hz / spec.control_rate_hz))
    if sub < 1 or abs(sub * spec.control_rate_hz - spec.physics_rate_hz) > 1e-6:
        raise ValueError("physics rate must be an integer multiple of the control rate")
    dt_ctrl = sub * dt
    steps = int(round(spec.duration * spec.control_rate_hz))
    log_every = 1.0 / spec.log_rate_hz if spec.log_rate_hz else 0.0
    next_log = 0.0
    n = spec.vehicle.n
    rows = []
    diverged_at = None
    for k in range(steps):
        sim.time = k * dt_ctrl
        sim._apply_events(sim.time)
        info = sim.control(dt_ctrl)
        s = sim.state
        if sim.time + 1e-12 >= next_log:
            next_log += log_every
            R = s.dcm_inertial_from_body
            b = R @ np.array([0.0, 0.0, -1.0])
            n_des = info["n_des"]
            cmd = info["cmd"]
            frame = info["frame"]
            vec = info["demand"]
            rows.append([
                sim.time, *map(float, s.position), *map(float, s.velocity), *map(float, s.omega),
                *map(float, b), math.degrees(tilt_angle(R)), math.degrees(tilt_angle(info["R_hat"])),
                math.degrees(math.acos(float(np.clip(b @ n_des, -1.0, 1.0)))),
                *map(float, n_des), info["tilt"].p_des, info["tilt"].q_des,
                *map(float, vec),
                *map(float, cmd.u), *map(float, s.rotor_speed),
                *map(float, frame.gyro), *map(float, frame.accel),
                sim.filter.acceptance_rate, int(sim.filter.last_accepted), "|".join(cmd.saturated_axes), int(cmd.tilt_unmet),
                int(info["tilt"].guarded), "|".join(map(str, sorted(sim.dead))),
                "|".join(map(str, sorted(sim.model.failed))),
            ])
        try:
            for _ in range(sub):
                sim.physics(dt)
        except DivergenceError:
            diverged_at = k
            break
        if np.linalg.norm(sim.state.position) > 1e4:
            diverged_at = k
            break
    result = SimResult(_log_header(n), rows, {})
    result.summary = summarize(result, spec, sim, diverged_at)
    result.runtime = _time.perf_counter() - started
    return result


def thrust_axis_trace(bx, by) -> dict:
    """Circle fit of the horizontal thrust-axis trace: centre, radii, ratio."""
    pts = np.column_stack([bx, by])
    # algebraic (Kasa) fit keeps the centre honest when the loop is off-origin
    A = np.column_stack([2 * pts, np.ones(len(pts))])
    rhs = np.sum(pts**2, axis=1)
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    center = sol[:2]
    radii = np.linalg.norm(pts - center, axis=1)
    rmin = float(radii.min())
    return {
        "center": center.tolist(),
        "mean_radius": float(radii.mean()),
        "min_radius": rmin,
        "max_radius": float(radii.max()),
        "radius_ratio": float(radii.max() / rmin) if rmin > 0 else float("inf"),
    }


def summarize(result: SimResult, spec: ScenarioSpec, sim: Simulation, diverged_at) -> dict:
    t = result.column("time") if result.rows else np.zeros(0)
    out = {
        "scenario": spec.name,
        "duration": spec.duration,
        "seed": spec.seed,
        "diverged": diverged_at is not None,
        "diverged_tick": diverged_at,
        "samples": len(result.rows),
        "saturation_counts": dict(sim.saturation_counts),
        "tilt_unmet_ticks": int(sim.tilt_unmet_count),
        "h3_guard_ticks": int(sim.guard_count),
        "lp_rescue_ticks": int(sim.lp_rescues),
        "gate_acceptance_rate": sim.filter.acceptance_rate,
    }
    if len(t) == 0:
        return out
    window = t >= t[-1] - 10.0
    r = np.abs(result.column("r"))
    rw = r[window]
    mean_r = float(rw.mean())
    out["settled_spin_rate"] = mean_r
    out["settled_spin_rate_deg_s"] = math.degrees(mean_r)
    out["spin_rate_deviation"] = float(np.max(np.abs(rw - mean_r)) / mean_r) if mean_r > 0 else 0.0
    err = result.column("tilt_error_deg")
    tilt = result.column("tilt_deg")
    out["tilt_error_deg"] = {
        "median": float(np.median(err[window])),
        "p95": float(np.percentile(err[window], 95)),
        "max": float(err[window].max()),
    }
    out["tilt_deg"] = {"median": float(np.median(tilt[window])), "max": float(tilt[window].max())}
    pos = np.column_stack([result.column(c) for c in ("x", "y", "z")])
    out["gate_acceptance_rate_settled"] = float(result.column("accel_gated")[window].mean())
    out["max_position_error"] = float(np.max(np.linalg.norm(pos, axis=1)))
    trace_win = t >= t[-1] - TRACE_WINDOW
    bx = result.column("thrust_axis_x")[trace_win]
    by = result.column("thrust_axis_y")[trace_win]
    out["thrust_axis_trace"] = thrust_axis_trace(bx, by)
    step = max(1, int(len(bx) / 200))
    out["thrust_axis_trace"]["points"] = [[float(a), float(b)] for a, b in zip(bx[::step], by[::step])]
    return out


# --- ground spin calibration logs ----------------------------------------------------------

def run_ground_spin(spec: ScenarioSpec) -> SimResult:
    from .imu_calibration import synthetic_spin_log
    g = spec.ground_spin
    imu = spec.imu
    rate = imu.sample_rate
    log = synthetic_spin_log(
        imu.lever_arm, duration=spec.duration, rate_hz=rate,
        spin_range=tuple(g.get("spin_range", (5.0, 30.0))),
        accel_noise_sd=imu.accel_noise_sd, gyro_noise_sd=imu.gyro_noise_sd,
        seed=spec.seed, wobble=float(g.get("wobble", 0.0)),
    )
    cols = ["time", "gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "accel_z"]
    rows = [[float(ti), *map(float, gy), *map(float, ac)]
            for ti, gy, ac in zip(log.time, log.gyro, log.accel)]
    summary = {"scenario": spec.name, "kind": "ground_spin", "samples": len(rows),
               "planted_lever_arm": imu.lever_arm.tolist()}
    return SimResult(cols, rows, summary)


def write_outputs(result: SimResult, out_dir) -> tuple:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "log.csv"
    log_path.write_text(result.csv_text(), encoding="utf-8")
    sum_path = out / "summary.json"
    sum_path.write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return log_path, sum_path
