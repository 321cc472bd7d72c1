"""Independent oracle implementations for cross-checking the engine.

Nothing here imports production geometry/checklist code: containment uses
winding numbers, box overlap uses corner containment plus edge crossings,
and the collision sweep re-derives box corners and projections from scratch
with its own vectorized separating-axis test.
"""

from __future__ import annotations

import math

import numpy as np


# --- point in polygon (winding number) ------------------------------------


def winding_number(ring, p) -> int:
    """Signed winding number of a closed ring around p (angle summation)."""
    px, py = p
    total = 0.0
    n = len(ring)
    for i in range(n):
        ax, ay = ring[i][0] - px, ring[i][1] - py
        bx, by = ring[(i + 1) % n][0] - px, ring[(i + 1) % n][1] - py
        total += math.atan2(ax * by - ay * bx, ax * bx + ay * by)
    return round(total / (2.0 * math.pi))


def point_on_ring(ring, p, eps: float = 1e-12) -> bool:
    px, py = p
    n = len(ring)
    for i in range(n):
        ax, ay = ring[i]
        bx, by = ring[(i + 1) % n]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        dot = (px - ax) * (bx - ax) + (py - ay) * (by - ay)
        ll = (bx - ax) ** 2 + (by - ay) ** 2
        if cross * cross <= eps * max(ll, 1.0) and -eps <= dot <= ll + eps:
            return True
    return False


def contains_even_odd(rings, p) -> bool:
    """Even-odd multi-ring containment via winding parities (off-boundary only)."""
    parity = 0
    for ring in rings:
        parity ^= winding_number(ring, p) & 1
    return bool(parity)


# --- oriented boxes --------------------------------------------------------


def box_corners(cx, cy, yaw, length, width) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def _point_in_convex_quad(quad, p) -> bool:
    sign = 0
    for i in range(4):
        a = quad[i]
        b = quad[(i + 1) % 4]
        cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
        if cross > 0:
            this = 1
        elif cross < 0:
            this = -1
        else:
            continue
        if sign == 0:
            sign = this
        elif sign != this:
            return False
    return True


def _segments_cross(a0, a1, b0, b1) -> bool:
    d1 = (a1[0] - a0[0], a1[1] - a0[1])
    d2 = (b1[0] - b0[0], b1[1] - b0[1])
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    if denom == 0.0:
        return False  # parallel/collinear handled by containment in practice
    t = ((b0[0] - a0[0]) * d2[1] - (b0[1] - a0[1]) * d2[0]) / denom
    u = ((b0[0] - a0[0]) * d1[1] - (b0[1] - a0[1]) * d1[0]) / denom
    return 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0


def quads_overlap(qa: np.ndarray, qb: np.ndarray) -> bool:
    """Exact convex-quad overlap: corner containment or any edge crossing."""
    for p in qa:
        if _point_in_convex_quad(qb, p):
            return True
    for p in qb:
        if _point_in_convex_quad(qa, p):
            return True
    for i in range(4):
        for j in range(4):
            if _segments_cross(qa[i], qa[(i + 1) % 4], qb[j], qb[(j + 1) % 4]):
                return True
    return False


def _point_segment_distance(p, a, b) -> float:
    ab = (b[0] - a[0], b[1] - a[1])
    ll = ab[0] ** 2 + ab[1] ** 2
    if ll == 0:
        return math.hypot(p[0] - a[0], p[1] - a[1])
    t = max(0.0, min(1.0, ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / ll))
    return math.hypot(p[0] - a[0] - t * ab[0], p[1] - a[1] - t * ab[1])


def quad_separation(qa: np.ndarray, qb: np.ndarray) -> float:
    """Exact distance between two disjoint convex quads (0 if they overlap)."""
    if quads_overlap(qa, qb):
        return 0.0
    best = math.inf
    for src, dst in ((qa, qb), (qb, qa)):
        for p in src:
            for i in range(4):
                best = min(best, _point_segment_distance(p, dst[i], dst[(i + 1) % 4]))
    return best


def quad_penetration(qa: np.ndarray, qb: np.ndarray) -> float:
    """Min-axis overlap depth (0 when separated): SAT margin proxy."""
    depth = math.inf
    for quad in (qa, qb):
        for i in (0, 1):
            edge = quad[i + 1] - quad[i]
            axis = np.array([edge[1], -edge[0]])
            axis = axis / np.linalg.norm(axis)
            pa = qa @ axis
            pb = qb @ axis
            overlap = min(pa.max(), pb.max()) - max(pa.min(), pb.min())
            if overlap < depth:
                depth = overlap
    return max(depth, 0.0)


def overlap_margin(qa: np.ndarray, qb: np.ndarray) -> float:
    """Distance to the decision boundary: separation if disjoint, penetration if not."""
    sep = quad_separation(qa, qb)
    if sep > 0.0:
        return sep
    return quad_penetration(qa, qb)


# --- vectorized box sweep (dense collision oracle) -------------------------


def corners_batch(centers: np.ndarray, yaws: np.ndarray, length: float, width: float) -> np.ndarray:
    """(T,4,2) corner array for a box moving along (T,2) centers / (T,) yaws."""
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = np.cos(yaws), np.sin(yaws)
    rot = np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)  # (T,2,2)
    return np.einsum("tij,kj->tki", rot, local) + centers[:, None, :]


def sat_overlap_batch(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """(T,) boolean overlap per time step for two (T,4,2) corner tracks."""
    overlap = np.ones(corners_a.shape[0], dtype=bool)
    for corners in (corners_a, corners_b):
        for i in (0, 1):
            edge = corners[:, i + 1, :] - corners[:, i, :]
            axis = np.stack([edge[:, 1], -edge[:, 0]], axis=-1)
            axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
            pa = np.einsum("tki,ti->tk", corners_a, axis)
            pb = np.einsum("tki,ti->tk", corners_b, axis)
            separated = (pa.min(axis=1) > pb.max(axis=1)) | (pb.min(axis=1) > pa.max(axis=1))
            overlap &= ~separated
    return overlap


def interp_positions(times: np.ndarray, knot_t: np.ndarray, knot_xy: np.ndarray) -> np.ndarray:
    """Piecewise-linear positions; clamped at the ends like the engine."""
    xs = np.interp(times, knot_t, knot_xy[:, 0])
    ys = np.interp(times, knot_t, knot_xy[:, 1])
    return np.column_stack([xs, ys])


def segment_headings(times: np.ndarray, knot_t: np.ndarray, knot_xy: np.ndarray) -> np.ndarray:
    """Heading of the segment containing each time; the incoming segment at knots."""
    seg = np.diff(knot_xy, axis=0)
    heading = np.arctan2(seg[:, 1], seg[:, 0])
    idx = np.clip(np.searchsorted(knot_t, times, side="left") - 1, 0, len(seg) - 1)
    return heading[idx]


# --- clustering ------------------------------------------------------------


def adjusted_rand_index(labels_a, labels_b) -> float:
    """ARI from the contingency table (exact combinatorics)."""
    a = list(labels_a)
    b = list(labels_b)
    assert len(a) == len(b)
    n = len(a)

    def comb2(x: int) -> float:
        return x * (x - 1) / 2.0

    table: dict[tuple, int] = {}
    count_a: dict = {}
    count_b: dict = {}
    for x, y in zip(a, b):
        table[(x, y)] = table.get((x, y), 0) + 1
        count_a[x] = count_a.get(x, 0) + 1
        count_b[y] = count_b.get(y, 0) + 1

    sum_cells = sum(comb2(v) for v in table.values())
    sum_a = sum(comb2(v) for v in count_a.values())
    sum_b = sum(comb2(v) for v in count_b.values())
    expected = sum_a * sum_b / comb2(n)
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return (sum_cells - expected) / (max_index - expected)
