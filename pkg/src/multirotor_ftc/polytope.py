"""Geometry kernel: zonotopes generated by actuator boxes and LP support queries.

All sets here are images ``{G u : lo <= u <= hi}`` of an axis-aligned box under
a linear map, possibly of lower dimension than the ambient space.
"""
from __future__ import annotations

from itertools import combinations

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull

DEDUP_TOL = 1e-9
_MAX_REFINE = 500


def affine_basis(points: np.ndarray, tol: float = 1e-9):
    """Centroid and orthonormal basis (rows) of the affine hull of ``points``."""
    pts = np.atleast_2d(points)
    center = pts.mean(axis=0)
    centered = pts - center
    if len(pts) < 2:
        return center, np.zeros((0, pts.shape[1]))
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(1.0, float(np.abs(pts).max()))
    rank = int(np.sum(s > tol * scale))
    return center, vt[:rank]


def unique_rows(points: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    """Drop rows lying within ``tol`` (max-norm) of an earlier kept row."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        return pts
    kept = np.empty_like(pts)
    count = 0
    for p in pts:
        if count and np.any(np.max(np.abs(kept[:count] - p), axis=1) <= tol):
            continue
        kept[count] = p
        count += 1
    return kept[:count].copy()


def extreme_points(points: np.ndarray, tol: float = DEDUP_TOL) -> np.ndarray:
    """Vertices of the convex hull of ``points`` in any affine dimension."""
    pts = unique_rows(points, tol)
    if len(pts) <= 1:
        return pts
    center, basis = affine_basis(pts, tol)
    k = len(basis)
    if k == 0:
        return pts[:1]
    coords = (pts - center) @ basis.T
    if k == 1:
        return pts[[int(np.argmin(coords[:, 0])), int(np.argmax(coords[:, 0]))]]
    if len(pts) <= k:
        return pts
    hull = ConvexHull(coords)
    return pts[np.sort(hull.vertices)]


def box_vertices(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """All 2**m corners of the box, m = number of non-degenerate sides."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    free = np.flatnonzero(hi > lo)
    m = len(free)
    bits = (np.arange(2**m)[:, None] >> np.arange(m)[None, :]) & 1
    corners = np.tile(lo, (2**m, 1))
    corners[:, free] = np.where(bits == 1, hi[free], lo[free])
    return corners


def minkowski_vertices(G: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Vertices of G*box built as a running Minkowski sum of segments."""
    verts = (G @ lo)[None, :]
    for i in range(G.shape[1]):
        step = G[:, i] * (hi[i] - lo[i])
        if not np.any(step):
            continue
        verts = extreme_points(np.vstack([verts, verts + step]))
    return verts


def zonotope_halfspaces(center: np.ndarray, generators: np.ndarray, tol: float = 1e-10):
    """Exact facet description ``A x <= b`` of ``center + sum_j [-1, 1] g_j``.

    ``generators`` holds one half-length generator per column. Lower-dimensional
    zonotopes get an equality pair for each direction orthogonal to their span.
    Rows of ``A`` have unit norm.
    """
    d = len(center)
    gens = generators[:, np.linalg.norm(generators, axis=0) > tol]
    rows, offs = [], []
    if gens.shape[1] == 0:
        basis = np.zeros((0, d))
    else:
        u, s, _ = np.linalg.svd(gens, full_matrices=True)
        rank = int(np.sum(s > tol * max(1.0, s[0])))
        basis = u[:, :rank].T
        for w in u[:, rank:].T:
            rows += [w, -w]
            offs += [w @ center, -(w @ center)]
    if gens.shape[1] == 0:
        for w in np.eye(d):
            rows += [w, -w]
            offs += [w @ center, -(w @ center)]
        return np.array(rows), np.array(offs)
    k = len(basis)
    local = basis @ gens
    normals = []
    if k == 1:
        normals = [np.array([1.0])]
    else:
        for subset in combinations(range(local.shape[1]), k - 1):
            sub = local[:, subset].T
            _, ss, vt = np.linalg.svd(sub, full_matrices=True)
            if np.sum(ss > tol * max(1.0, ss[0])) < k - 1:
                continue
            nrm = vt[-1]
            if not any(abs(abs(nrm @ other) - 1.0) < 1e-12 for other in normals):
                normals.append(nrm)
    for nrm in normals:
        a = nrm @ basis
        reach = float(np.sum(np.abs(nrm @ local)))
        rows += [a, -a]
        offs += [a @ center + reach, -(a @ center) + reach]
    return np.array(rows), np.array(offs)


def box_image_halfspaces(G: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    center = G @ ((lo + hi) / 2.0)
    half = G * ((hi - lo) / 2.0)
    return zonotope_halfspaces(center, half)


def zonotope_volume(G: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Full-dimensional volume from the determinant sum over generator subsets."""
    gens = G * (hi - lo)
    d = G.shape[0]
    total = 0.0
    for subset in combinations(range(gens.shape[1]), d):
        total += abs(np.linalg.det(gens[:, subset]))
    return total


# --- LP queries on the box preimage -------------------------------------------------

def _solve(c, A_ub, b_ub, A_eq, b_eq, bounds):
    res = linprog(c, A_ub=A_ub if len(A_ub) else None, b_ub=b_ub if len(b_ub) else None,
                  A_eq=A_eq if len(A_eq) else None, b_eq=b_eq if len(b_eq) else None,
                  bounds=bounds, method="highs")
    return res if res.status == 0 else None


def _yaw_rows(G, ncols, yaw_lo, yaw_hi):
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    row = np.zeros(ncols)
    row[: G.shape[1]] = G[2]
    if yaw_lo is not None and yaw_hi is not None and yaw_lo == yaw_hi:
        A_eq.append(row)
        b_eq.append(yaw_lo)
    else:
        if yaw_hi is not None:
            A_ub.append(row)
            b_ub.append(yaw_hi)
        if yaw_lo is not None:
            A_ub.append(-row)
            b_ub.append(-yaw_lo)
    return A_ub, b_ub, A_eq, b_eq


def tilt_support(G, lo, hi, direction, thrust=None, yaw_lo=None, yaw_hi=None):
    """max d . (M_roll, M_pitch) over the box, with thrust fixed and yaw bounded.

    Returns ``(value, u)`` or ``None`` when the constraints are infeasible.
    ``None`` bounds leave that quantity free.
    """
    n = G.shape[1]
    d = np.asarray(direction, dtype=float)
    c = -(d @ G[:2])
    A_ub, b_ub, A_eq, b_eq = _yaw_rows(G, n, yaw_lo, yaw_hi)
    if thrust is not None:
        A_eq.append(G[3].copy())
        b_eq.append(thrust)
    res = _solve(c, np.array(A_ub), np.array(b_ub), np.array(A_eq), np.array(b_eq),
                 list(zip(lo, hi)))
    if res is None:
        return None
    return -res.fun, res.x


def tilt_ray(G, lo, hi, direction, thrust=None, yaw_lo=None, yaw_hi=None):
    """Largest s with (s*d, yaw, thrust) attainable; ``None`` if even s=0 is not.

    Negative values mean the ray from the origin only meets the set behind it.
    """
    n = G.shape[1]
    d = np.asarray(direction, dtype=float)
    perp = np.array([-d[1], d[0]])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub, b_ub, A_eq, b_eq = _yaw_rows(G, n + 1, yaw_lo, yaw_hi)
    A_eq.append(np.append(perp @ G[:2], 0.0))
    b_eq.append(0.0)
    A_eq.append(np.append(d @ G[:2], -1.0))
    b_eq.append(0.0)
    if thrust is not None:
        A_eq.append(np.append(G[3], 0.0))
        b_eq.append(thrust)
    bounds = list(zip(lo, hi)) + [(None, None)]
    res = _solve(c, np.array(A_ub), np.array(b_ub), np.array(A_eq), np.array(b_eq), bounds)
    if res is None:
        return None
    return -res.fun


def yaw_range(G, lo, hi, thrust=None, moment=None):
    """(min, max) yaw moment attainable with thrust (and optionally tilt) fixed."""
    n = G.shape[1]
    A_eq, b_eq = [], []
    if thrust is not None:
        A_eq.append(G[3])
        b_eq.append(thrust)
    if moment is not None:
        A_eq += [G[0], G[1]]
        b_eq += [moment[0], moment[1]]
    out = []
    for sign in (1.0, -1.0):
        res = _solve(sign * G[2], [], [], np.array(A_eq), np.array(b_eq), list(zip(lo, hi)))
        if res is None:
            return None
        out.append(sign * res.fun)
    return out[0], out[1]


def is_attainable(G, lo, hi, target, tol=1e-9):
    """LP feasibility of G u = target with u in the box (equality relaxed by tol)."""
    n = G.shape[1]
    m = G.shape[0]
    # minimise the L1 residual; attainable iff the optimum is ~0
    c = np.concatenate([np.zeros(n), np.ones(2 * m)])
    A_eq = np.hstack([G, np.eye(m), -np.eye(m)])
    bounds = list(zip(lo, hi)) + [(0, None)] * (2 * m)
    res = _solve(c, [], [], A_eq, np.asarray(target, dtype=float), bounds)
    return res is not None and res.fun <= tol


def section_polygon(G, lo, hi, thrust, yaw_lo=None, yaw_hi=None, tol=1e-9):
    """Exact (M_roll, M_pitch) polygon of the set at fixed thrust and bounded yaw.

    Built by support-function refinement: each edge's outward normal is queried
    until no query exposes a new vertex. Returns vertices in counter-clockwise
    order (possibly 1 or 2 points for degenerate sections), or an empty array.
    """
    scale = max(1e-12, float(np.max(np.linalg.norm(G[:2], axis=0) * np.maximum(np.abs(hi), np.abs(lo)))))
    eps = tol * max(1.0, scale)

    def query(d):
        r = tilt_support(G, lo, hi, d, thrust, yaw_lo, yaw_hi)
        if r is None:
            return None
        return r[0], G[:2] @ r[1]

    angles = np.arange(8) * np.pi / 4
    found = []
    for a in angles:
        r = query(np.array([np.cos(a), np.sin(a)]))
        if r is None:
            return np.zeros((0, 2))
        found.append(r[1])
    pts = unique_rows(np.array(found), eps)
    center, basis = affine_basis(pts, eps)
    if len(basis) == 1:
        # probe the line's normals before accepting a flat section
        nrm = np.array([-basis[0, 1], basis[0, 0]])
        extra = [query(s * nrm)[1] for s in (1.0, -1.0)]
        pts = unique_rows(np.vstack([pts, extra]), eps)
        center, basis = affine_basis(pts, eps)
    if len(basis) < 2:
        return extreme_points(pts, eps)
    hull = ConvexHull(pts)
    poly = [pts[i] for i in hull.vertices]  # counter-clockwise in 2-D
    final = [False] * len(poly)
    for _ in range(_MAX_REFINE):
        open_edges = [i for i, f in enumerate(final) if not f]
        if not open_edges:
            break
        i = open_edges[0]
        a, b = poly[i], poly[(i + 1) % len(poly)]
        edge = b - a
        nrm = np.array([edge[1], -edge[0]]) / np.linalg.norm(edge)
        val, p = query(nrm)
        if val > nrm @ a + eps:
            poly.insert(i + 1, p)
            final.insert(i + 1, False)
        else:
            final[i] = True
    return np.array(poly)


def polygon_margin(poly: np.ndarray) -> float:
    """Signed clearance of the origin from the polygon boundary.

    Equals the radius of the largest origin-centred disk inside the polygon
    when the origin is interior; zero or negative otherwise; ``-inf`` if empty.
    """
    if len(poly) == 0:
        return float("-inf")
    if len(poly) < 3:
        if len(poly) == 1:
            return -float(np.linalg.norm(poly[0]))
        a, b = poly
        t = np.clip(-(a @ (b - a)) / max((b - a) @ (b - a), 1e-300), 0.0, 1.0)
        return -float(np.linalg.norm(a + t * (b - a)))
    margins = []
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        edge = b - a
        nrm = np.array([edge[1], -edge[0]]) / np.linalg.norm(edge)
        margins.append(float(nrm @ a))
    return min(margins)
