"""Pseudo-inverse control allocation with priority desaturation.

Demands are expressed in the scaled frame ``[p_dot, q_dot, r_dot, a_z - g]``
(NED, so a hover demand has ``a_z - g = -g``). The fourth row of the scaled
effectiveness matrix yields the upward specific thrust ``-(a_z - g)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .avcs import ControlSet, max_moment_in_direction
from .vehicle import AXES, AXIS_INDEX, GRAVITY, EffectivenessModel

DEFAULT_PRIORITY = ("yaw", "thrust", "pitch", "roll")  # low -> high
DIVISION_GUARD = 1e-12
BOUND_TOL = 1e-9

# relative weight of thrust over yaw when the tilt rescue has to give something up
_THRUST_WEIGHT = 1e3


@dataclass(frozen=True)
class ControlDemand:
    omega_dot_des: np.ndarray
    az_des_minus_g: float

    def __post_init__(self):
        w = np.asarray(self.omega_dot_des, dtype=float).reshape(3)
        object.__setattr__(self, "omega_dot_des", w)
        object.__setattr__(self, "az_des_minus_g", float(self.az_des_minus_g))
        if not (np.all(np.isfinite(w)) and np.isfinite(self.az_des_minus_g)):
            raise ValueError("demand must be finite")

    @classmethod
    def hover(cls, omega_dot=(0.0, 0.0, 0.0)) -> "ControlDemand":
        return cls(np.asarray(omega_dot, dtype=float), -GRAVITY)

    @classmethod
    def from_vector(cls, v) -> "ControlDemand":
        """Inverse of :meth:`vector`."""
        v = np.asarray(v, dtype=float)
        return cls(v[:3], -v[3])

    def vector(self) -> np.ndarray:
        """Scaled-frame vector matching the rows of ``scaled_G``."""
        return np.append(self.omega_dot_des, -self.az_des_minus_g)


@dataclass
class ActuatorCommand:
    u: np.ndarray
    saturated_axes: list = field(default_factory=list)
    applied_gains: dict = field(default_factory=dict)
    tilt_unmet: bool = False
    lp_rescue: bool = False

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.u, 0.0))


def _violations(u, lo, hi):
    return (u < lo - BOUND_TOL) | (u > hi + BOUND_TOL)


def _axis_gain(u, d, lo, hi, healthy):
    """Kmin/Kmax sweep over the rotors for one desaturation vector."""
    k_min = 0.0
    k_max = 0.0
    guard = DIVISION_GUARD * max(1.0, float(np.max(np.abs(d))))
    for i in np.flatnonzero(healthy):
        if abs(d[i]) < guard:
            continue
        if u[i] < lo[i] - BOUND_TOL:
            k = (lo[i] - u[i]) / d[i]
        elif u[i] > hi[i] + BOUND_TOL:
            k = (hi[i] - u[i]) / d[i]
        else:
            continue
        if k <= k_min:
            k_min = k
        elif k >= k_max:
            k_max = k
    return k_max + k_min


def _tilt_rescue_line(model: EffectivenessModel, target, H):
    """Exact rescue when the commands matching the tilt rows form a line.

    With three live rotors the roll/pitch constraints leave one free
    direction, so the LP collapses to an interval search along it.
    """
    A = model.scaled_G
    lo, hi = model.u_lower[H], model.u_upper[H]
    sub = A[:, H]
    v0 = np.linalg.lstsq(sub[:2], target[:2], rcond=None)[0]
    z = np.linalg.svd(sub[:2])[2][-1]
    s_lo, s_hi = -np.inf, np.inf
    for v, zi, a, b in zip(v0, z, lo, hi):
        if abs(zi) < 1e-14:
            if v < a - BOUND_TOL or v > b + BOUND_TOL:
                return None
            continue
        s1, s2 = sorted(((a - v) / zi, (b - v) / zi))
        s_lo, s_hi = max(s_lo, s1), min(s_hi, s2)
    if s_lo > s_hi + 1e-12:
        return None
    yaw0, yz = sub[2] @ v0 - target[2], sub[2] @ z
    thr0, tz = sub[3] @ v0 - target[3], sub[3] @ z
    cands = [s_lo, s_hi]
    for c0, cz in ((yaw0, yz), (thr0, tz)):
        if abs(cz) > 1e-300:
            cands.append(min(max(-c0 / cz, s_lo), s_hi))
    best = min(cands, key=lambda t: abs(yaw0 + yz * t) + _THRUST_WEIGHT * abs(thr0 + tz * t))
    u = np.zeros(model.n)
    u[H] = np.clip(v0 + best * z, lo, hi)
    return u


def _tilt_outside_projection(model: EffectivenessModel, target, H) -> bool:
    """True when the roll/pitch target lies outside the box image in the tilt plane.

    That image is a zonogon whose edges are parallel to the rotor columns, so
    one halfspace per column direction (both signs) is an exact test and saves
    an LP for demands that no command can meet.
    """
    gens = model.scaled_G[:2, H]
    lo, hi = model.u_lower[H], model.u_upper[H]
    normals = np.stack([-gens[1], gens[0]], axis=1)
    lengths = np.linalg.norm(normals, axis=1)
    keep = lengths > 0
    if not np.any(keep):
        return False
    normals = normals[keep] / lengths[keep, None]
    normals = np.vstack([normals, -normals])
    proj = normals @ gens
    support = np.sum(np.maximum(proj * lo, proj * hi), axis=1)
    scale = max(float(np.abs(support).max()), float(np.abs(target[:2]).max()), 1e-300)
    return bool(np.any(normals @ target[:2] > support + 1e-9 * scale))


def _tilt_rescue(model: EffectivenessModel, target):
    """Closest in-box command that reproduces the roll and pitch of ``target``.

    Minimises weighted |thrust error| and |yaw error|; any null-space motion is
    allowed. Returns ``None`` if the tilt demand itself is not attainable.
    """
    A = model.scaled_G
    n = model.n
    lo, hi = model.u_lower, model.u_upper
    H = np.flatnonzero(model.healthy)
    if _tilt_outside_projection(model, target, H):
        return None
    if len(H) == 3 and np.linalg.matrix_rank(A[:2, H]) == 2:
        return _tilt_rescue_line(model, target, H)
    # variables: u (n), then slack pairs for yaw and thrust errors
    c = np.concatenate([np.zeros(n), [1.0, 1.0, _THRUST_WEIGHT, _THRUST_WEIGHT]])
    A_eq = np.zeros((4, n + 4))
    A_eq[:, :n] = A
    A_eq[2, n:n + 2] = (1.0, -1.0)
    A_eq[3, n + 2:] = (1.0, -1.0)
    bounds = list(zip(lo, hi)) + [(0.0, None)] * 4
    res = linprog(c, A_eq=A_eq, b_eq=target, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    v = np.clip(res.x[:n], lo, hi)
    # polish the tilt rows exactly using rotors strictly inside their range
    free = (v > lo + 1e-9) & (v < hi - 1e-9)
    if np.any(free):
        rows = A[:2]
        err = target[:2] - rows @ v
        step = np.linalg.lstsq(rows[:, free], err, rcond=None)[0]
        trial = v.copy()
        trial[free] += step
        if np.all(trial >= lo) and np.all(trial <= hi):
            v = trial
    return v


def desaturate(model: EffectivenessModel, u_raw, priority=DEFAULT_PRIORITY,
               target=None, tilt_rescue: bool = True) -> ActuatorCommand:
    """Bring ``u_raw`` inside the rotor bounds, sacrificing low-priority axes first.

    Each pass shifts the command along the pseudo-inverse column of one axis
    by the combined gain ``K_max + K_min``. When ``tilt_rescue`` is on and
    violations survive the passes below the two tilt axes, an LP restores the
    tilt part of ``target`` (defaults to ``scaled_G @ u_raw``) before the tilt
    passes run. A hard clamp finishes the job.
    """
    u = np.array(u_raw, dtype=float)
    if u.shape != (model.n,) or not np.all(np.isfinite(u)):
        raise ValueError("u_raw must be a finite vector with one entry per rotor")
    lo, hi = model.u_lower, model.u_upper
    healthy = model.healthy
    u[~healthy] = 0.0
    if target is None:
        target = model.scaled_G @ u
    target = np.asarray(target, dtype=float)
    cmd = ActuatorCommand(u)
    tilt_axes = {"roll", "pitch"}
    rescued = False
    for axis in priority:
        if axis in tilt_axes and tilt_rescue and not rescued:
            rescued = True
            if np.any(_violations(u, lo, hi)):
                fixed = _tilt_rescue(model, target)
                if fixed is None:
                    cmd.tilt_unmet = True
                else:
                    for other in ("yaw", "thrust"):
                        if other not in cmd.saturated_axes:
                            cmd.saturated_axes.append(other)
                    u = fixed
                    cmd.lp_rescue = True
        d = model.pinv_scaled_G[:, AXIS_INDEX[axis]]
        gain = _axis_gain(u, d, lo, hi, healthy)
        if gain != 0.0:
            u = u + gain * d
            cmd.applied_gains[axis] = cmd.applied_gains.get(axis, 0.0) + gain
            if axis not in cmd.saturated_axes:
                cmd.saturated_axes.append(axis)
            if axis in tilt_axes:
                cmd.tilt_unmet = True
    if np.any(_violations(u, lo, hi)) and set(priority) & tilt_axes:
        cmd.tilt_unmet = True
    u = np.clip(u, lo, hi)
    u[~healthy] = 0.0
    cmd.u = u
    return cmd


def allocate(model: EffectivenessModel, demand: ControlDemand, priority=DEFAULT_PRIORITY,
             tilt_rescue: bool = True) -> ActuatorCommand:
    target = demand.vector()
    u_raw = model.pinv_scaled_G @ target
    return desaturate(model, u_raw, priority, target=target, tilt_rescue=tilt_rescue)


def clamp_demand_to_avcs(demand: ControlDemand, control_set: ControlSet,
                         yaw_bound: float = np.inf) -> ControlDemand:
    """Shrink the tilt part of ``demand`` onto the attainable tilt boundary.

    The direction of the (roll, pitch) acceleration is kept; yaw and thrust
    pass through. Needs the set's generator model for inertia and mass.
    """
    tilt = demand.omega_dot_des[:2]
    if not np.any(tilt):
        return demand
    model = control_set.generator_model
    if model is None:
        raise ValueError("control set carries no effectiveness model")
    cfg = model.config
    moment = cfg.inertia[:2] * tilt
    size = float(np.linalg.norm(moment))
    thrust = -cfg.mass * demand.az_des_minus_g
    support = max_moment_in_direction(control_set, moment / size, thrust, yaw_bound)
    if size <= support:
        return demand
    w = demand.omega_dot_des.copy()
    w[:2] *= support / size
    return ControlDemand(w, demand.az_des_minus_g)


def reproduced_demand(model: EffectivenessModel, cmd: ActuatorCommand) -> ControlDemand:
    return ControlDemand.from_vector(model.scaled_G @ cmd.u)


__all__ = [
    "AXES", "ControlDemand", "ActuatorCommand", "allocate", "desaturate",
    "clamp_demand_to_avcs", "reproduced_demand", "DEFAULT_PRIORITY",
]
