"""Planar geometry kernel: oriented boxes, polygons with holes, polylines, segments.

All predicates are conservative for safety checking: touching counts as
overlap / containment. A single epsilon (``EPS``) guards degenerate
configurations; callers that fuzz these predicates should stay away from a
~1e-6 boundary band since no exact arithmetic is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Single tolerance for degenerate predicates (near-zero cross products,
# touching projections). Not a general-purpose snapping distance.
EPS = 1e-9


@dataclass(frozen=True)
class OrientedBox:
    """Axis-agnostic rectangle: center, yaw (ccw, radians), length along yaw, width across."""

    cx: float
    cy: float
    yaw: float
    length: float
    width: float

    def __post_init__(self) -> None:
        if not (self.length > 0 and self.width > 0):
            raise ValueError(f"box extents must be positive, got {self.length}x{self.width}")

    def corners(self) -> np.ndarray:
        """4x2 array of corner coordinates, counter-clockwise."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([self.cx, self.cy])


@dataclass(frozen=True)
class Polygon:
    """One outer ring plus optional hole rings.

    Rings are stored open (first point not repeated); ``>= 3`` distinct
    vertices each. Containment is even-odd over all rings, so points inside
    a hole fall outside.
    """

    outer: tuple[tuple[float, float], ...]
    holes: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self) -> None:
        for ring in (self.outer, *self.holes):
            if len(ring) < 3:
                raise ValueError("polygon rings need at least 3 vertices")

    def rings(self) -> tuple[tuple[tuple[float, float], ...], ...]:
        return (self.outer, *self.holes)


def normalize_ring(points) -> tuple[tuple[float, float], ...]:
    """Drop an explicit closing point and collapse consecutive duplicates."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    out: list[tuple[float, float]] = []
    for p in pts:
        if not out or p != out[-1]:
            out.append(p)
    return tuple(out)


def _axes_of(corners: np.ndarray) -> np.ndarray:
    # Two face normals are enough per rectangle.
    e0 = corners[1] - corners[0]
    e1 = corners[2] - corners[1]
    axes = np.array([[e0[1], -e0[0]], [e1[1], -e1[0]]])
    norms = np.linalg.norm(axes, axis=1, keepdims=True)
    return axes / np.maximum(norms, EPS)


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis test for two oriented rectangles; touching counts as overlap."""
    ca, cb = a.corners(), b.corners()
    for axis in np.vstack([_axes_of(ca), _axes_of(cb)]):
        pa = ca @ axis
        pb = cb @ axis
        if pa.min() > pb.max() + EPS or pb.min() > pa.max() + EPS:
            return False
    return True


def _on_segment(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> bool:
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    seg_len = math.hypot(bx - ax, by - ay)
    if abs(cross) > EPS * max(1.0, seg_len):
        return False
    dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay)
    return -EPS <= dot <= seg_len * seg_len + EPS


def point_in_rings(p: tuple[float, float], rings) -> bool:
    """Even-odd containment over a collection of rings; boundaries count as inside."""
    px, py = float(p[0]), float(p[1])
    inside = False
    for ring in rings:
        n = len(ring)
        for i in range(n):
            ax, ay = ring[i]
            bx, by = ring[(i + 1) % n]
            if _on_segment(px, py, ax, ay, bx, by):
                return True
            # Half-open ray-casting rule: count edges crossing the horizontal
            # ray to +x, excluding the upper endpoint.
            if (ay > py) != (by > py):
                x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
                if x_cross > px:
                    inside = not inside
    return inside


def point_in_polygon(p: tuple[float, float], poly: Polygon) -> bool:
    """Even-odd containment; points strictly inside a hole fall outside."""
    return point_in_rings(p, poly.rings())


def polyline_lateral(
    p: tuple[float, float], polyline: np.ndarray
) -> tuple[float, float, float]:
    """Project a point onto a polyline.

    Returns ``(signed_lateral, arclength, heading)`` of the closest point:
    lateral is positive when ``p`` lies left of the travel direction,
    arclength is measured from the first vertex, heading is the direction of
    the supporting segment. Feet beyond segment ends clamp to the endpoint.
    """
    line = np.asarray(polyline, dtype=float)
    if line.ndim != 2 or line.shape[0] < 2:
        raise ValueError("polyline needs at least 2 points")
    q = np.array([float(p[0]), float(p[1])])

    starts = line[:-1]
    ends = line[1:]
    d = ends - starts
    seg_len = np.linalg.norm(d, axis=1)
    safe = np.maximum(seg_len, EPS)
    t = np.clip(np.einsum("ij,ij->i", q - starts, d) / safe**2, 0.0, 1.0)
    feet = starts + t[:, None] * d
    dist = np.linalg.norm(q - feet, axis=1)

    i = int(np.argmin(dist))
    foot = feet[i]
    heading = math.atan2(d[i, 1], d[i, 0])
    cross = d[i, 0] * (q[1] - starts[i, 1]) - d[i, 1] * (q[0] - starts[i, 0])
    lateral = math.copysign(dist[i], cross) if dist[i] > 0 else 0.0
    arclength = float(np.sum(seg_len[:i]) + t[i] * seg_len[i])
    return float(lateral), arclength, heading


def segments_intersect(
    s1: tuple[tuple[float, float], tuple[float, float]],
    s2: tuple[tuple[float, float], tuple[float, float]],
) -> tuple[float, float] | None:
    """Intersection point of two closed segments, or None.

    Proper and improper (endpoint) intersections both count. For collinear
    overlap the first shared point along ``s1`` direction is returned.
    """
    (x1, y1), (x2, y2) = s1
    (x3, y3), (x4, y4) = s2
    r = (x2 - x1, y2 - y1)
    s = (x4 - x3, y4 - y3)
    denom = r[0] * s[1] - r[1] * s[0]
    qp = (x3 - x1, y3 - y1)
    qp_cross_r = qp[0] * r[1] - qp[1] * r[0]
    scale = max(1.0, abs(r[0]) + abs(r[1]) + abs(s[0]) + abs(s[1]))

    if abs(denom) <= EPS * scale:
        if abs(qp_cross_r) > EPS * scale:
            return None  # parallel, not collinear
        # Collinear: overlap interval in s1's parameter t.
        rr = r[0] * r[0] + r[1] * r[1]
        if rr <= EPS:
            # s1 degenerate to a point; shared iff that point lies on s2.
            return (x1, y1) if _on_segment(x1, y1, x3, y3, x4, y4) else None
        t0 = (qp[0] * r[0] + qp[1] * r[1]) / rr
        t1 = t0 + (s[0] * r[0] + s[1] * r[1]) / rr
        lo, hi = min(t0, t1), max(t0, t1)
        lo = max(lo, 0.0)
        hi = min(hi, 1.0)
        if lo > hi + EPS:
            return None
        return (x1 + lo * r[0], y1 + lo * r[1])

    t = (qp[0] * s[1] - qp[1] * s[0]) / denom
    u = qp_cross_r / denom
    if -EPS <= t <= 1 + EPS and -EPS <= u <= 1 + EPS:
        return (x1 + t * r[0], y1 + t * r[1])
    return None
