"""2D geometry primitives shared across the stack.

Everything works on plain float tuples so results are bit-reproducible;
no numpy in the per-tick path.
"""

from __future__ import annotations

import math
from typing import Sequence

Vec2 = tuple[float, float]

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, TWO_PI)
    if wrapped <= 0.0:
        wrapped += TWO_PI
    return wrapped - math.pi


def norm(v: Vec2) -> float:
    return math.hypot(v[0], v[1])


def dist(a: Vec2, b: Vec2) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def to_frame(point: Vec2, origin: Vec2, heading: float) -> Vec2:
    """World point -> frame at ``origin`` with x along ``heading``, y to the left."""
    dx = point[0] - origin[0]
    dy = point[1] - origin[1]
    c = math.cos(heading)
    s = math.sin(heading)
    return (c * dx + s * dy, -s * dx + c * dy)


def from_frame(point: Vec2, origin: Vec2, heading: float) -> Vec2:
    """Inverse of :func:`to_frame`."""
    c = math.cos(heading)
    s = math.sin(heading)
    return (origin[0] + c * point[0] - s * point[1],
            origin[1] + s * point[0] + c * point[1])


class Polyline:
    """Arc-length parameterized polyline with projection and sampling."""

    def __init__(self, points: Sequence[Vec2]):
        if len(points) < 2:
            raise ValueError("polyline needs at least 2 points")
        self.points: tuple[Vec2, ...] = tuple((float(x), float(y)) for x, y in points)
        cum = [0.0]
        for a, b in zip(self.points, self.points[1:]):
            step = dist(a, b)
            if step == 0.0:
                raise ValueError("polyline has coincident consecutive points")
            cum.append(cum[-1] + step)
        self._cum: tuple[float, ...] = tuple(cum)

    @property
    def length(self) -> float:
        return self._cum[-1]

    def point_at(self, s: float) -> Vec2:
        s = min(max(s, 0.0), self.length)
        i = self._segment_index(s)
        a = self.points[i]
        b = self.points[i + 1]
        seg = self._cum[i + 1] - self._cum[i]
        t = (s - self._cum[i]) / seg
        return (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))

    def tangent_at(self, s: float) -> float:
        """Heading of the segment containing arc coordinate ``s``."""
        s = min(max(s, 0.0), self.length)
        i = self._segment_index(s)
        a = self.points[i]
        b = self.points[i + 1]
        return math.atan2(b[1] - a[1], b[0] - a[0])

    def offset_point(self, s: float, lateral: float) -> Vec2:
        """Point at arc coordinate ``s`` shifted ``lateral`` to the left."""
        base = self.point_at(s)
        heading = self.tangent_at(s)
        return (base[0] - math.sin(heading) * lateral,
                base[1] + math.cos(heading) * lateral)

    def project(self, point: Vec2) -> tuple[float, float, float]:
        """Project ``point`` onto the polyline.

        Returns (s, signed lateral offset with left positive, absolute
        distance).  The nearest segment wins; ties resolve to the earlier
        segment so projection is deterministic.
        """
        best_d2 = math.inf
        best_s = 0.0
        best_lat = 0.0
        px, py = point
        for i in range(len(self.points) - 1):
            ax, ay = self.points[i]
            bx, by = self.points[i + 1]
            ex = bx - ax
            ey = by - ay
            seg_len = self._cum[i + 1] - self._cum[i]
            t = ((px - ax) * ex + (py - ay) * ey) / (seg_len * seg_len)
            t = min(max(t, 0.0), 1.0)
            qx = ax + t * ex
            qy = ay + t * ey
            d2 = (px - qx) ** 2 + (py - qy) ** 2
            if d2 < best_d2 - 1e-15:
                best_d2 = d2
                best_s = self._cum[i] + t * seg_len
                # left-positive lateral: z of tangent x (point - foot)
                cross = ex * (py - qy) - ey * (px - qx)
                best_lat = math.copysign(math.sqrt(d2), cross) if d2 > 0.0 else 0.0
        return best_s, best_lat, math.sqrt(best_d2)

    def _segment_index(self, s: float) -> int:
        lo, hi = 0, len(self._cum) - 2
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self._cum[mid] <= s:
                lo = mid
            else:
                hi = mid - 1
        return lo


def polyline_length(points: Sequence[Vec2]) -> float:
    total = 0.0
    for a, b in zip(points, points[1:]):
        total += dist(a, b)
    return total


def point_in_convex_polygon(point: Vec2, polygon: Sequence[Vec2]) -> bool:
    """True if ``point`` lies inside or on the convex ``polygon`` (CW or CCW)."""
    n = len(polygon)
    if n < 3:
        return False
    sign = 0
    px, py = point
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        if abs(cross) < 1e-12:
            continue
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def is_convex_polygon(polygon: Sequence[Vec2]) -> bool:
    """Strictly convex up to collinear runs; implies the polygon is simple."""
    n = len(polygon)
    if n < 3:
        return False
    sign = 0
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        cx, cy = polygon[(i + 2) % n]
        cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(cross) < 1e-12:
            continue
        s = 1 if cross > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return sign != 0


def rect_corners(center: Vec2, heading: float, length: float, width: float) -> tuple[Vec2, Vec2, Vec2, Vec2]:
    """Corners of an oriented rectangle, CCW."""
    c = math.cos(heading)
    s = math.sin(heading)
    hl = 0.5 * length
    hw = 0.5 * width
    cx, cy = center
    return (
        (cx + c * hl - s * hw, cy + s * hl + c * hw),
        (cx - c * hl - s * hw, cy - s * hl + c * hw),
        (cx - c * hl + s * hw, cy - s * hl - c * hw),
        (cx + c * hl + s * hw, cy + s * hl - c * hw),
    )


def _project_interval(corners: Sequence[Vec2], axis: Vec2) -> tuple[float, float]:
    vals = [c[0] * axis[0] + c[1] * axis[1] for c in corners]
    return min(vals), max(vals)


def rects_overlap(a: Sequence[Vec2], b: Sequence[Vec2]) -> bool:
    """Separating-axis overlap test for two convex quads; touching counts."""
    for quad in (a, b):
        for i in range(4):
            px, py = quad[i]
            qx, qy = quad[(i + 1) % 4]
            axis = (-(qy - py), qx - px)
            amin, amax = _project_interval(a, axis)
            bmin, bmax = _project_interval(b, axis)
            if amax < bmin or bmax < amin:
                return False
    return True


def segment_intersects_rect(p0: Vec2, p1: Vec2, corners: Sequence[Vec2]) -> bool:
    """True if segment p0-p1 touches the axis-oriented rectangle ``corners``.

    Degenerate segments fall back to a point-in-quad test.
    """
    if point_in_convex_polygon(p0, corners) or point_in_convex_polygon(p1, corners):
        return True
    for i in range(4):
        if _segments_cross(p0, p1, corners[i], corners[(i + 1) % 4]):
            return True
    return False


def _segments_cross(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> bool:
    def orient(p: Vec2, q: Vec2, r: Vec2) -> float:
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    d1 = orient(a0, a1, b0)
    d2 = orient(a0, a1, b1)
    d3 = orient(b0, b1, a0)
    d4 = orient(b0, b1, a1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    return False
