"""Attainable virtual control sets and post-failure controllability.

The attainable set of a vehicle is the zonotope ``{G u : u in box}`` in
``(M_roll, M_pitch, M_yaw, F_z)``. Controllability around hover is judged
from LP support queries on the box preimage rather than from the 4-D hull.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import polytope
from .vehicle import EffectivenessModel

AVCS_DIMS = ("M_roll", "M_pitch", "M_yaw", "F_z")
YAW_FRACTION_PROBE = 0.10
INTERIOR_TOL = 1e-6


class InfeasibleThrustError(ValueError):
    """Requested thrust lies outside the attainable thrust range."""


@dataclass(frozen=True, eq=False)
class ControlSet:
    dims: tuple
    vertices: np.ndarray
    A: np.ndarray
    b: np.ndarray
    generator_model: Optional[EffectivenessModel] = None
    # box preimage (G, lo, hi) when the set is a zonotope image; None for slices
    preimage: Optional[tuple] = field(default=None, repr=False)

    @property
    def halfspaces(self) -> list:
        return list(zip(self.A, self.b))

    @property
    def dim(self) -> int:
        return len(self.dims)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        pts = np.atleast_2d(points)
        if len(self.A) == 0:
            return np.zeros(len(pts), dtype=bool)
        return np.all(pts @ self.A.T <= self.b + tol, axis=1)

    def max_violation(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.max(pts @ self.A.T - self.b, axis=1)

    @property
    def volume(self) -> float:
        """Hull volume; zero for sets that are flat in their ambient space."""
        _, basis = polytope.affine_basis(self.vertices)
        if len(basis) < self.dim:
            return 0.0
        from scipy.spatial import ConvexHull
        return float(ConvexHull(self.vertices).volume)


def box_image_set(G: np.ndarray, lo: np.ndarray, hi: np.ndarray, dims=AVCS_DIMS,
                  model: Optional[EffectivenessModel] = None) -> ControlSet:
    """Zonotope image of a box; works for any rotor count, including one."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    verts = polytope.minkowski_vertices(G, lo, hi)
    A, b = polytope.box_image_halfspaces(G, lo, hi)
    return ControlSet(tuple(dims), verts, A, b, model, (G, lo, hi))


def build_avcs(model: EffectivenessModel) -> ControlSet:
    return box_image_set(model.G, model.u_lower, model.u_upper, AVCS_DIMS, model)


def slice_zero_yaw(cset: ControlSet) -> ControlSet:
    """3-D section of a 4-D set at zero yaw moment; may be empty or flat."""
    if "M_yaw" not in cset.dims:
        raise ValueError("set has no yaw axis to slice")
    if cset.preimage is None:
        raise ValueError("slicing needs the box preimage of the set")
    yaw = cset.dims.index("M_yaw")
    keep = [i for i in range(cset.dim) if i != yaw]
    G, lo, hi = cset.preimage
    corners = polytope.box_vertices(lo, hi)
    images = corners @ G.T
    eps = 1e-12 * max(1.0, float(np.abs(images).max()))
    pts = [images[np.abs(images[:, yaw]) <= eps]]
    # every edge of the zonotope is the image of some box edge
    for j in np.flatnonzero(hi > lo):
        base = corners[:, j] == lo[j]
        p0 = images[base]
        step = G[:, j] * (hi[j] - lo[j])
        if abs(step[yaw]) <= eps:
            continue
        t = -p0[:, yaw] / step[yaw]
        hit = (t > 0.0) & (t < 1.0)
        pts.append(p0[hit] + t[hit, None] * step)
    pts = np.vstack(pts) if pts else np.zeros((0, cset.dim))
    if len(pts):
        pts[:, yaw] = 0.0
        verts = polytope.extreme_points(pts[:, keep])
    else:
        verts = np.zeros((0, len(keep)))
    return ControlSet(tuple(cset.dims[i] for i in keep), verts,
                      cset.A[:, keep], cset.b.copy(), cset.generator_model, None)


@dataclass(frozen=True)
class ControllabilityVerdict:
    case_id: int
    tilt_margin_at_zero_yaw: float
    tilt_margin_with_free_yaw: float
    required_yaw_fraction: Optional[float]
    hover_thrust: float
    tilt_margin_at_probe_yaw: float = float("nan")
    yaw_fraction_probe: float = YAW_FRACTION_PROBE
    max_yaw_moment: float = float("nan")
    tolerance: float = float("nan")

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return None
            return v
        return {k: clean(v) for k, v in self.__dict__.items()}


def _box(model_or_set):
    if isinstance(model_or_set, ControlSet):
        if model_or_set.preimage is None:
            raise ValueError("set has no box preimage")
        return model_or_set.preimage
    m = model_or_set
    return m.G, m.u_lower, m.u_upper


def tilt_scale(G, lo, hi) -> float:
    """Largest tilt moment magnitude over the whole set (thrust and yaw free).

    With yaw and thrust free the tilt section is the projected box, whose
    support along ``a`` is a per-rotor sum, so no LP is needed.
    """
    a = np.arange(8) * np.pi / 4
    dirs = np.column_stack([np.cos(a), np.sin(a)])
    proj = dirs @ np.asarray(G, dtype=float)[:2]
    return float(np.max(np.sum(np.maximum(proj * lo, proj * hi), axis=1)))


def tilt_margin(G, lo, hi, thrust, yaw_bound) -> float:
    """Signed radius of the largest tilt disk about zero moment.

    ``yaw_bound`` of 0 pins yaw to zero, ``None`` leaves it free.
    """
    if yaw_bound is None:
        poly = polytope.section_polygon(G, lo, hi, thrust)
    else:
        poly = polytope.section_polygon(G, lo, hi, thrust, -yaw_bound, yaw_bound)
    return polytope.polygon_margin(poly)


def classify(model: EffectivenessModel, hover_thrust: float,
             yaw_fraction_probe: float = YAW_FRACTION_PROBE) -> ControllabilityVerdict:
    """Assign controllability case 1, 2 or 3 at the given hover thrust (N)."""
    if not 0.0 <= yaw_fraction_probe <= 1.0:
        raise ValueError("yaw_fraction_probe must lie in [0, 1]")
    G, lo, hi = _box(model)
    t_lo, t_hi = float(G[3] @ lo), float(G[3] @ hi)
    if not t_lo < hover_thrust < t_hi:
        raise InfeasibleThrustError(
            f"hover thrust {hover_thrust:g} N outside attainable range ({t_lo:g}, {t_hi:g})")
    yaw = polytope.yaw_range(G, lo, hi, thrust=hover_thrust)
    max_yaw = max(abs(yaw[0]), abs(yaw[1]))
    tol = INTERIOR_TOL * tilt_scale(G, lo, hi)

    at_zero = tilt_margin(G, lo, hi, hover_thrust, 0.0)
    at_probe = tilt_margin(G, lo, hi, hover_thrust, yaw_fraction_probe * max_yaw)
    free = tilt_margin(G, lo, hi, hover_thrust, None)
    if at_zero > tol:
        case, required = 1, 0.0
    elif free > tol:
        case = 2
        balance = polytope.yaw_range(G, lo, hi, thrust=hover_thrust, moment=(0.0, 0.0))
        need = 0.0 if balance[0] <= 0.0 <= balance[1] else min(abs(balance[0]), abs(balance[1]))
        required = need / max_yaw if max_yaw > 0 else None
    else:
        case, required = 3, None
    return ControllabilityVerdict(
        case_id=case,
        tilt_margin_at_zero_yaw=at_zero,
        tilt_margin_with_free_yaw=free,
        required_yaw_fraction=required,
        hover_thrust=float(hover_thrust),
        tilt_margin_at_probe_yaw=at_probe,
        yaw_fraction_probe=float(yaw_fraction_probe),
        max_yaw_moment=max_yaw,
        tolerance=tol,
    )


def max_moment_in_direction(cset, direction, thrust: float, yaw_bound: float = math.inf) -> float:
    """Support of the tilt section along a unit direction, floored at zero.

    Accepts a ControlSet with a box preimage or an EffectivenessModel.
    """
    d = np.asarray(direction, dtype=float)
    if d.shape != (2,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit 2-vector")
    G, lo, hi = _box(cset)
    bound = None if yaw_bound is None or math.isinf(yaw_bound) else float(yaw_bound)
    yl = None if bound is None else -bound
    s = polytope.tilt_ray(G, lo, hi, d, thrust, yl, bound)
    if s is None:
        return 0.0
    return max(0.0, float(s))


def yaw_slice_polygon(cset, thrust: float) -> np.ndarray:
    """Counter-clockwise (M_roll, M_pitch) polygon at zero yaw and fixed thrust."""
    G, lo, hi = _box(cset)
    return polytope.section_polygon(G, lo, hi, thrust, 0.0, 0.0)
