"""Accelerometer lever-arm calibration from a ground-spin log.

An IMU mounted at ``r_v`` from the spin centre reads an extra
``Omega_dot x r_v + Omega x (Omega x r_v)``. On a flat spin the true specific
force is straight up, so the offset is the one that makes the corrected
readings point along gravity at every spin rate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .dynamics import cross3
from .sysid import DEFAULT_CUTOFF_HZ, butterworth_lowpass
from .vehicle import GRAVITY

DOWN_BODY = np.array([0.0, 0.0, -1.0])  # direction of a level accelerometer reading
SEARCH_TOL = 1e-5
RATE_SPREAD_MIN = 0.05
MIN_SPIN_RATE = 2.0
CURVATURE_STEP = 1e-3
MAX_LEVER_ARM = 0.5  # m; beyond this the corrected reading can flatten to a constant 90 deg


class NonIdentifiableError(ValueError):
    """The log does not cover enough spin rates to separate the offset."""


def predict_lever_accel(omega, omega_dot, r_v) -> np.ndarray:
    """Lever-arm acceleration; accepts single vectors or N x 3 stacks."""
    w = np.asarray(omega, dtype=float)
    wd = np.asarray(omega_dot, dtype=float)
    r = np.asarray(r_v, dtype=float)
    if w.ndim == 1 and wd.ndim == 1:
        return cross3(wd, r) + cross3(w, cross3(w, r))
    return np.cross(wd, r) + np.cross(w, np.cross(w, r))


def tilt_error(accel_corrected, g_hat=DOWN_BODY) -> np.ndarray | float:
    """Angle between the reading and the level reference; vectorized over rows."""
    a = np.asarray(accel_corrected, dtype=float)
    if np.any(np.linalg.norm(a, axis=-1) == 0):
        raise ValueError("accelerometer reading has zero magnitude")
    cross = np.linalg.norm(np.cross(a, g_hat), axis=-1)
    dot = a @ g_hat
    out = np.arctan2(cross, dot)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SpinLog:
    time: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    omega_dot: np.ndarray = field(default=None)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.gyro = np.asarray(self.gyro, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float)
        if len(self.time) < 3 or np.any(np.diff(self.time) <= 0):
            raise ValueError("spin log timestamps must be strictly increasing (at least 3 samples)")
        if self.omega_dot is None:
            self.omega_dot = differentiate_gyro(self.time, self.gyro)

    @property
    def spin_rate(self) -> np.ndarray:
        return np.abs(self.gyro[:, 2])

    @classmethod
    def from_frames(cls, frames) -> "SpinLog":
        frames = list(frames)
        return cls(np.array([f.timestamp for f in frames]),
                   np.array([f.gyro for f in frames]),
                   np.array([f.accel for f in frames]))


def differentiate_gyro(time, gyro, cutoff_hz: float = DEFAULT_CUTOFF_HZ) -> np.ndarray:
    """Central-difference angular acceleration, then the identification low-pass."""
    rate = 1.0 / float(np.median(np.diff(time)))
    raw = np.gradient(np.asarray(gyro, dtype=float), time, axis=0)
    if cutoff_hz >= rate / 2.0:
        return raw
    return butterworth_lowpass(raw, cutoff_hz, rate)


@dataclass(frozen=True)
class OffsetEstimate:
    r_v: np.ndarray
    cost: float
    per_rate_bias: list
    identifiable_axes: tuple
    curvature: np.ndarray
    tilt_bias: float = 0.0
    cost_at_zero: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "r_v": self.r_v.tolist(),
            "cost": self.cost,
            "cost_at_zero": self.cost_at_zero,
            "identifiable_axes": list(self.identifiable_axes),
            "curvature": self.curvature.tolist(),
            "tilt_bias": self.tilt_bias,
            "per_rate_bias": self.per_rate_bias,
        }


def corrected_tilt(log: SpinLog, r_v) -> np.ndarray:
    acc = log.accel - predict_lever_accel(log.gyro, log.omega_dot, r_v)
    return tilt_error(acc)


def spin_cost(log: SpinLog, r_v, tilt_bias: bool = False) -> float:
    """Mean squared tilt error; with ``tilt_bias`` a constant offset is removed first."""
    eta = corrected_tilt(log, r_v)
    if tilt_bias:
        eta = eta - eta.mean()
    return float(np.mean(eta**2))


def check_identifiable(log: SpinLog):
    rates = log.spin_rate
    hi = float(np.percentile(rates, 95))
    lo = float(np.percentile(rates, 5))
    if hi < MIN_SPIN_RATE:
        raise NonIdentifiableError(f"no spin in log (95th percentile rate {hi:.3g} rad/s)")
    if hi - lo <= RATE_SPREAD_MIN * hi:
        raise NonIdentifiableError(
            f"all samples share one spin rate ({lo:.3g}..{hi:.3g} rad/s); vary the rate by more than 5%")


def _per_rate_bias(log: SpinLog, r_v, bins: int = 10) -> list:
    rates = log.spin_rate
    eta = corrected_tilt(log, r_v)
    edges = np.linspace(rates.min(), rates.max(), bins + 1)
    idx = np.clip(np.digitize(rates, edges) - 1, 0, bins - 1)
    out = []
    for b in range(bins):
        sel = idx == b
        if np.any(sel):
            out.append({"spin_rate": float(rates[sel].mean()), "tilt_error": float(eta[sel].mean()),
                        "samples": int(sel.sum())})
    return out


def _coordinate_search(cost, r0, axes, tol, span, max_sweeps):
    r = np.array(r0, dtype=float)
    for _ in range(max_sweeps):
        moved = 0.0
        for ax in axes:
            def line(s, ax=ax):
                trial = r.copy()
                trial[ax] = s
                return cost(trial)
            res = minimize_scalar(line, bracket=(r[ax] - span, r[ax] + span),
                                  method="golden", options={"xtol": tol * 1e-3})
            if res.fun <= cost(r):
                moved = max(moved, abs(res.x - r[ax]))
                r[ax] = res.x
        span = max(min(span, 10 * moved), 10 * tol)
        if moved < tol:
            break
    return r


def estimate_offset(log: SpinLog, tilt_bias: bool = False, tol: float = SEARCH_TOL,
                    span: float = 0.25, max_sweeps: int = 50) -> OffsetEstimate:
    """Coordinate search with golden-section line minimization over ``r_v``.

    x and y are always searched; z only when the cost has curvature along it.
    With ``tilt_bias`` the search is refined from the bias-free optimum: far
    from it a large offset can flatten the corrected tilt to a constant.
    """
    check_identifiable(log)

    def plain(r):
        if np.abs(r).max() > MAX_LEVER_ARM:
            return float("inf")
        return spin_cost(log, r)

    def curvature(f, r, axis):
        e = np.zeros(3)
        e[axis] = CURVATURE_STEP
        return (f(r + e) - 2 * f(r) + f(r - e)) / CURVATURE_STEP**2

    r = _coordinate_search(plain, np.zeros(3), [0, 1], tol, span, max_sweeps=1)
    axes = [0, 1]
    if curvature(plain, r, 2) > 1e-3 * max(min(curvature(plain, r, 0), curvature(plain, r, 1)), 1e-300):
        axes = [0, 1, 2]
    r = _coordinate_search(plain, r, axes, tol, span, max_sweeps)
    final = plain
    if tilt_bias:
        def final(r):
            if np.abs(r).max() > MAX_LEVER_ARM:
                return float("inf")
            return spin_cost(log, r, True)
        r = _coordinate_search(final, r, axes, tol, max(10 * tol, 0.01), max_sweeps)
    curv = np.array([curvature(final, r, a) for a in range(3)])
    ident = tuple("xyz"[a] for a in axes)
    bias = float(corrected_tilt(log, r).mean()) if tilt_bias else 0.0
    return OffsetEstimate(r.copy(), final(r), _per_rate_bias(log, r), ident, curv, bias, final(np.zeros(3)))


def synthetic_spin_log(r_v, duration: float = 20.0, rate_hz: float = 500.0,
                       spin_range=(5.0, 30.0), accel_noise_sd: float = 0.0,
                       gyro_noise_sd: float = 0.0, seed: int = 0, wobble: float = 0.0) -> SpinLog:
    """Flat ground spin whose rate sweeps up and back down across ``spin_range``.

    ``wobble`` adds a small constant tilt (rad) of the spin axis, the kind of
    rate-independent bias a real airframe shows.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(0.0, duration, 1.0 / rate_hz)
    lo, hi = spin_range
    phase = np.pi * t / duration
    r = lo + (hi - lo) * np.sin(phase) ** 2
    r_dot = (hi - lo) * np.sin(2 * phase) * np.pi / duration
    omega = np.column_stack([np.zeros_like(t), np.zeros_like(t), r])
    omega_dot = np.column_stack([np.zeros_like(t), np.zeros_like(t), r_dot])
    grav = np.array([0.0, 0.0, -GRAVITY])
    if wobble:
        grav = GRAVITY * np.array([math.sin(wobble), 0.0, -math.cos(wobble)])
    accel = grav + predict_lever_accel(omega, omega_dot, np.asarray(r_v, dtype=float))
    gyro = omega.copy()
    if accel_noise_sd > 0:
        accel = accel + rng.normal(0.0, accel_noise_sd, accel.shape)
    if gyro_noise_sd > 0:
        gyro = gyro + rng.normal(0.0, gyro_noise_sd, gyro.shape)
    return SpinLog(t, gyro, accel)
