"""Shared 2-D geometry: exact AA rasterization and disc-vs-rectangle collision.

All shapes are axis-aligned rectangles plus a disc-shaped agent, so collisions
reduce to segment intersections with rectangles expanded by the disc radius
(offset faces + corner circles) and distances reduce to point-rectangle
distances. Positions are FP64; images are FP32.
"""

from __future__ import annotations

import numpy as np

Rect = tuple[float, float, float, float]  # x0, x1, y0, y1


def rect_distance(p: np.ndarray, rect: Rect) -> float:
    """Euclidean distance from point p to the (solid) rectangle."""
    x0, x1, y0, y1 = rect
    dx = max(x0 - p[0], 0.0, p[0] - x1)
    dy = max(y0 - p[1], 0.0, p[1] - y1)
    return float(np.hypot(dx, dy))


def segment_rect_entry(p: np.ndarray, d: np.ndarray, rect: Rect, radius: float) -> float:
    """Earliest t in [0,1] where a disc moving p -> p+d first touches `rect`.

    Returns inf when the swept disc stays clear. The expanded region boundary
    is four offset faces plus four corner circles; each candidate time is kept
    only if the contact point lies on its feature and the motion is inward.
    """
    x0, x1, y0, y1 = rect
    candidates: list[float] = []

    def face_time(axis: int, plane: float, lo: float, hi: float, inward: float) -> None:
        # crossing of p[axis] + t*d[axis] == plane while the other coordinate
        # stays within [lo, hi]; inward is the sign of d[axis] that enters
        if d[axis] * inward <= 0.0:
            return
        # denormal d overflows the divide to inf, which the range check drops
        with np.errstate(over="ignore"):
            t = (plane - p[axis]) / d[axis]
        if not (0.0 <= t <= 1.0):
            return
        other = p[1 - axis] + t * d[1 - axis]
        if lo <= other <= hi:
            candidates.append(t)

    face_time(0, x0 - radius, y0, y1, +1.0)
    face_time(0, x1 + radius, y0, y1, -1.0)
    face_time(1, y0 - radius, x0, x1, +1.0)
    face_time(1, y1 + radius, x0, x1, -1.0)

    dd = float(d @ d)
    if dd > 0.0:
        for cx, cy in ((x0, y0), (x0, y1), (x1, y0), (x1, y1)):
            f = p - np.array([cx, cy])
            b = float(f @ d)
            c = float(f @ f) - radius * radius
            disc = b * b - dd * c
            if disc < 0.0:
                continue
            sq = float(np.sqrt(disc))
            t = (-b - sq) / dd  # first root; entering when f.d < 0 there
            if 0.0 <= t <= 1.0 and (b + t * dd) < 0.0:
                candidates.append(t)

    # Already in contact and moving inward: contact at t=0.
    if rect_distance(p, rect) <= radius + 1e-12:
        eps = 1e-9
        if rect_distance(p + eps * d, rect) < rect_distance(p, rect):
            candidates.append(0.0)

    return min(candidates) if candidates else float("inf")


def segment_bounds_exit(p: np.ndarray, d: np.ndarray, lo: float, hi: float) -> float:
    """Earliest t in [0,1] where p + t*d leaves the box [lo,hi]^2 (inf if never)."""
    t_exit = float("inf")
    with np.errstate(over="ignore"):
        for axis in range(2):
            if d[axis] > 0.0:
                t = (hi - p[axis]) / d[axis]
            elif d[axis] < 0.0:
                t = (lo - p[axis]) / d[axis]
            else:
                continue
            if 0.0 <= t <= 1.0:
                t_exit = min(t_exit, t)
    return t_exit


def disc_coverage(res: int, center: np.ndarray, radius: float) -> np.ndarray:
    """Anti-aliased disc on a res x res unit-pixel grid (image row = y)."""
    coords = np.arange(res, dtype=np.float64) + 0.5
    dx = coords[None, :] - center[0]
    dy = coords[:, None] - center[1]
    dist = np.sqrt(dx * dx + dy * dy)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0).astype(np.float32)


def rect_coverage(res: int, rect: Rect) -> np.ndarray:
    """Exact pixel coverage of an axis-aligned rectangle (unit pixels)."""
    x0, x1, y0, y1 = rect
    lo = np.arange(res, dtype=np.float64)
    hi = lo + 1.0
    cov_x = np.clip(np.minimum(hi, x1) - np.maximum(lo, x0), 0.0, 1.0)
    cov_y = np.clip(np.minimum(hi, y1) - np.maximum(lo, y0), 0.0, 1.0)
    return (cov_y[:, None] * cov_x[None, :]).astype(np.float32)


def axis_move_limit(
    pos: np.ndarray,
    axis: int,
    delta: float,
    rects: list[Rect],
    radius: float,
    lo: float,
    hi: float,
) -> tuple[float, bool]:
    """Clamp a single-axis move of a disc against rectangles and box bounds.

    Returns (new coordinate along `axis`, hit flag). Exact: for a fixed
    off-axis coordinate the forbidden interval per rectangle is the rectangle
    span widened by sqrt(r^2 - gap^2), where gap is the off-axis clearance.
    """
    if delta == 0.0:
        return float(pos[axis]), False
    target = pos[axis] + delta
    hit = False
    if target < lo + radius:
        target, hit = lo + radius, True
    elif target > hi - radius:
        target, hit = hi - radius, True
    other = pos[1 - axis]
    for rect in rects:
        x0, x1, y0, y1 = rect
        a0, a1 = (x0, x1) if axis == 0 else (y0, y1)
        b0, b1 = (y0, y1) if axis == 0 else (x0, x1)
        gap = max(b0 - other, 0.0, other - b1)
        if gap >= radius:
            continue
        widen = float(np.sqrt(radius * radius - gap * gap))
        f_lo, f_hi = a0 - widen, a1 + widen
        if delta > 0.0 and pos[axis] <= f_lo + 1e-12 and target > f_lo:
            target, hit = f_lo, True
        elif delta < 0.0 and pos[axis] >= f_hi - 1e-12 and target < f_hi:
            target, hit = f_hi, True
    return float(target), hit
