"""Planar polygon and rigid-transform helpers shared across the pipeline."""

from __future__ import annotations

import numpy as np


def polygon_signed_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly) -> float:
    return abs(polygon_signed_area(poly))


def polygon_centroid(poly) -> np.ndarray:
    """Area centroid of a simple polygon (shoelace form)."""
    p = np.asarray(poly, dtype=float)
    # shift for numerical stability far from the origin
    origin = p.mean(axis=0)
    q = p - origin
    x, y = q[:, 0], q[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    if abs(a) < 1e-15:
        return origin
    cx = ((x + xn) * cross).sum() / (6.0 * a)
    cy = ((y + yn) * cross).sum() / (6.0 * a)
    return origin + np.array([cx, cy])


def ensure_ccw(poly) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    if polygon_signed_area(p) < 0:
        p = p[::-1]
    return p


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 != 0 and d3 * d4 != 0:
        return True
    return False


def is_simple_polygon(poly) -> bool:
    """True when no two non-adjacent edges cross."""
    p = np.asarray(poly, dtype=float)
    n = len(p)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = p[i], p[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a1, a2, p[j], p[(j + 1) % n]):
                return False
    return True


def is_convex(poly, tol: float = 1e-12) -> bool:
    p = np.asarray(poly, dtype=float)
    d = np.roll(p, -1, axis=0) - p
    cross = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    return bool(np.all(cross >= -tol) or np.all(cross <= tol))


def clip_convex(subject, clip) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` against the convex ``clip``.

    Both polygons are taken counter-clockwise; the result may be empty
    (shape ``(0, 2)``).
    """
    out = [tuple(v) for v in ensure_ccw(subject)]
    c = ensure_ccw(clip)
    m = len(c)
    for k in range(m):
        if not out:
            break
        ax, ay = c[k]
        bx, by = c[(k + 1) % m]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        sx, sy = inp[-1]
        s_side = ex * (sy - ay) - ey * (sx - ax)
        for px, py in inp:
            p_side = ex * (py - ay) - ey * (px - ax)
            if p_side >= 0:
                if s_side < 0:
                    t = s_side / (s_side - p_side)
                    out.append((sx + t * (px - sx), sy + t * (py - sy)))
                out.append((px, py))
            elif s_side >= 0:
                t = s_side / (s_side - p_side)
                out.append((sx + t * (px - sx), sy + t * (py - sy)))
            sx, sy, s_side = px, py, p_side
    if len(out) < 3:
        return np.zeros((0, 2))
    return np.asarray(out, dtype=float)


def points_in_polygon(points, poly) -> np.ndarray:
    """Vectorised even-odd crossing test; returns a boolean mask."""
    pts = np.asarray(points, dtype=float)
    p = np.asarray(poly, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(p)
    for i in range(n):
        x1, y1 = p[i]
        x2, y2 = p[(i + 1) % n]
        if y1 == y2:
            continue
        straddle = (y1 > y) != (y2 > y)
        xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddle & (x < xint)
    return inside


def ellipse_polygon(center, axis_u, a: float, b: float, n: int = 32) -> np.ndarray:
    """``n``-gon inscribed in the ellipse with semi-axis ``a`` along unit
    ``axis_u`` and ``b`` along its perpendicular."""
    u = np.asarray(axis_u, dtype=float)
    u = u / np.linalg.norm(u)
    v = np.array([-u[1], u[0]])
    t = 2.0 * np.pi * np.arange(n) / n
    pts = (a * np.cos(t))[:, None] * u + (b * np.sin(t))[:, None] * v
    return np.asarray(center, dtype=float) + pts


# -- rotations ---------------------------------------------------------------
# Quaternions are stored scalar-first: (w, x, y, z).

def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R) -> np.ndarray:
    """Rotation matrix to a unit quaternion with non-negative scalar part."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def probe_rotation(normal, elevation) -> np.ndarray:
    """Probe frame with beam (+z) into the surface and elevation (+y) as
    close to ``elevation`` as the surface normal allows."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    z = -n
    e = np.asarray(elevation, dtype=float)
    y = e - np.dot(e, z) * z
    y = y / np.linalg.norm(y)
    x = np.cross(y, z)
    return np.column_stack([x, y, z])
