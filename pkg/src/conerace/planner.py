"""Middle-line reference from mapped cones.

Blue cones bound the left of the track and red cones the right. Pairs are
mutual nearest neighbours within a gate, which makes the pairing independent
of argument order; midpoints are chained in the direction of travel implied
by the colors and smoothed with a cubic spline before resampling.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InsufficientTrackError, PlanningError
from .track import CONE_RADIUS, ReferencePath

GATE = 6.0
SAMPLE_DS = 0.5
DEFAULT_HALF_WIDTH = 2.0


def _as_points(pts) -> np.ndarray:
    return np.asarray(pts, dtype=float).reshape(-1, 2)


def pair_indices(blue, red, gate: float = GATE) -> list[tuple[int, int]]:
    """Mutual-nearest-neighbour pairs ``(i_blue, i_red)`` with distance ``<= gate``."""
    b, r = _as_points(blue), _as_points(red)
    if len(b) == 0 or len(r) == 0:
        return []
    d = np.linalg.norm(b[:, None, :] - r[None, :, :], axis=2)
    nb = np.argmin(d, axis=1)
    nr = np.argmin(d, axis=0)
    return [(i, int(j)) for i, j in enumerate(nb) if nr[j] == i and d[i, j] <= gate]


def _travel_direction(b: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Unit travel direction for a pair: blue lies to the left."""
    v = b - r
    d = np.array([v[1], -v[0]])
    return d / np.linalg.norm(d)


def _chain(mid: np.ndarray, dirs: np.ndarray, start: int) -> list[int]:
    """Greedy nearest-neighbour ordering that only moves forward."""
    order = [start]
    left = set(range(len(mid))) - {start}
    cur = start
    while left:
        cand = np.array(sorted(left))
        rel = mid[cand] - mid[cur]
        ahead = rel @ dirs[cur] > 0.0
        if not ahead.any():
            break
        cand, rel = cand[ahead], rel[ahead]
        k = int(cand[np.argmin(np.einsum("ij,ij->i", rel, rel))])
        order.append(k)
        left.remove(k)
        cur = k
    return order


def _matched(b: np.ndarray, r: np.ndarray, gate: float):
    pairs = pair_indices(b, r, gate)
    if len(pairs) < 2:
        raise InsufficientTrackError(f"only {len(pairs)} cone pair(s) within the {gate} m gate")
    pb = b[[i for i, _ in pairs]]
    pr = r[[j for _, j in pairs]]
    dirs = np.array([_travel_direction(x, y) for x, y in zip(pb, pr)])
    return 0.5 * (pb + pr), np.linalg.norm(pb - pr, axis=1), dirs


def pair_cones(blue, red, gate: float = GATE, start=None, return_gaps: bool = False):
    """Midpoints of matched blue/red cones, ordered along the travel direction.

    Args:
        blue, red: cone positions (n, 2).
        gate: maximum pair distance [m].
        start: optional ``(x, y)`` (or a pose); the chain begins at the
            midpoint nearest to it. Otherwise it begins at the pair holding
            the lowest blue index.
        return_gaps: also return the pair distances in the same order.

    Raises:
        InsufficientTrackError: fewer than two cones per side or fewer than
            two valid pairs.
    """
    b, r = _as_points(blue), _as_points(red)
    if len(b) < 2 or len(r) < 2:
        raise InsufficientTrackError(f"need at least 2 cones per side, got {len(b)} blue / {len(r)} red")
    mid, gaps, dirs = _matched(b, r, gate)
    if start is None:
        first = 0
    else:
        p = np.asarray(start, dtype=float)[:2]
        first = int(np.argmin(np.linalg.norm(mid - p, axis=1)))
    order = _chain(mid, dirs, first)
    if return_gaps:
        return mid[order], gaps[order]
    return mid[order]


def _segments_cross(p, q, pts_a, pts_b) -> np.ndarray:
    """Proper intersection of segment p-q with each segment a_i-b_i."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    d1 = orient(p, q, pts_a)
    d2 = orient(p, q, pts_b)
    d3 = orient(pts_a, pts_b, p)
    d4 = orient(pts_a, pts_b, q)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def self_intersects(points, closed: bool) -> bool:
    pts = _as_points(points)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    n = len(pts) - 1
    for i in range(n - 2):
        j0 = i + 2
        j1 = n - 1 if (closed and i == 0) else n
        if j0 >= j1:
            continue
        if _segments_cross(pts[i], pts[i + 1], pts[j0:j1], pts[j0 + 1 : j1 + 1]).any():
            return True
    return False


def circumcircle_curvature(a, b, c) -> np.ndarray:
    """Signed curvature of the circle through three points (positive = left turn)."""
    a, b, c = (np.asarray(v, dtype=float) for v in (a, b, c))
    ab = b - a
    bc = c - b
    ca = a - c
    cross = ab[..., 0] * bc[..., 1] - ab[..., 1] * bc[..., 0]
    denom = np.linalg.norm(ab, axis=-1) * np.linalg.norm(bc, axis=-1) * np.linalg.norm(ca, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(denom > 0, 2.0 * cross / denom, 0.0)
    return k


def build_reference(
    midpoints,
    closed: bool = True,
    ds: float = SAMPLE_DS,
    half_widths=None,
    blue=None,
    red=None,
    margin: float = CONE_RADIUS,
) -> ReferencePath:
    """Spline the midpoints and resample them at ``ds``.

    Curvature at the samples is interpolated from the circumcircle
    curvature at each midpoint (its neighbours define the circle).

    The corridor at each sample is ``+-(half gap - margin)`` where the half
    gap is interpolated between midpoints. It comes from ``half_widths`` if
    given, else from paired ``blue``/``red`` rows aligned with the midpoints,
    else a 2 m default.

    Raises:
        InsufficientTrackError: fewer than three midpoints.
        PlanningError: the midpoint sequence (or the smoothed path)
            crosses itself.
    """
    mid = _as_points(midpoints)
    if len(mid) < 3:
        raise InsufficientTrackError(f"need at least 3 midpoints, got {len(mid)}")
    if not ds > 0:
        raise ValueError("ds must be positive")
    if half_widths is None:
        if blue is not None and red is not None:
            half_widths = 0.5 * np.linalg.norm(_as_points(blue) - _as_points(red), axis=1)
        else:
            half_widths = np.full(len(mid), DEFAULT_HALF_WIDTH)
    hw = np.asarray(half_widths, dtype=float).reshape(-1)
    if len(hw) != len(mid):
        raise ValueError("half_widths must align with midpoints")
    keep = np.concatenate([[True], np.linalg.norm(np.diff(mid, axis=0), axis=1) > 1e-9])
    mid, hw = mid[keep], hw[keep]
    if closed and np.linalg.norm(mid[-1] - mid[0]) < 1e-9:
        mid, hw = mid[:-1], hw[:-1]
    if len(mid) < 3:
        raise InsufficientTrackError("fewer than 3 distinct midpoints")
    if self_intersects(mid, closed):
        raise PlanningError("midpoint sequence intersects itself")

    knots = np.vstack([mid, mid[:1]]) if closed else mid
    hw_k = np.append(hw, hw[0]) if closed else hw
    chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(knots, axis=0), axis=1))])
    spline = CubicSpline(chord, knots, bc_type="periodic" if closed else "natural")

    dense_t = np.linspace(0.0, chord[-1], max(200, 20 * len(knots)))
    dense = spline(dense_t)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
    total = arc[-1]
    if closed:
        n = max(3, int(round(total / ds)))
        s = np.arange(n) * (total / n)
    else:
        n = max(3, int(math.floor(total / ds)) + 1)
        s = np.linspace(0.0, total, n)
    t = np.interp(s, arc, dense_t)
    pts = spline(t)
    if self_intersects(pts, closed):
        raise PlanningError("smoothed reference intersects itself")

    # Curvature comes from circles through consecutive midpoints, interpolated
    # along s: the spline's own curvature rings at the cone spacing wherever
    # the track switches between straight and arc.
    s_knot = np.interp(chord, dense_t, arc)
    if closed:
        k_knot = circumcircle_curvature(np.roll(mid, 1, axis=0), mid, np.roll(mid, -1, axis=0))
        kappa = np.interp(s, s_knot, np.append(k_knot, k_knot[0]))
        prev, nxt = np.roll(pts, 1, axis=0), np.roll(pts, -1, axis=0)
        d = nxt - prev
    else:
        k_knot = np.zeros(len(mid))
        k_knot[1:-1] = circumcircle_curvature(mid[:-2], mid[1:-1], mid[2:])
        k_knot[0], k_knot[-1] = k_knot[1], k_knot[-2]
        kappa = np.interp(s, s_knot, k_knot)
        d = np.gradient(pts, axis=0)
    heading = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    half = np.maximum(np.interp(t, chord, hw_k) - margin, 0.0)
    return ReferencePath(s=s, x=pts[:, 0], y=pts[:, 1], heading=heading, kappa=kappa, ey_min=-half, ey_max=half, closed=closed)


def reference_from_cones(blue, red, closed: bool = True, gate: float = GATE, start=None, ds: float = SAMPLE_DS) -> ReferencePath:
    """Pair, order and spline in one call."""
    mid, gaps = pair_cones(blue, red, gate, start=start, return_gaps=True)
    return build_reference(mid, closed=closed, ds=ds, half_widths=0.5 * gaps)


def exploration_reference(blue, red, pose, gate: float = GATE, ds: float = SAMPLE_DS, back: float = 2.0) -> ReferencePath:
    """Open lap-1 reference through the confident pairs ahead of the vehicle.

    The path starts ``back`` metres behind the vehicle along its heading so
    that the vehicle projects inside it, then follows the chained midpoints
    that lie ahead.

    Raises:
        InsufficientTrackError: fewer than two pairs ahead.
    """
    x, y, psi = float(pose[0]), float(pose[1]), float(pose[2])
    fwd = np.array([math.cos(psi), math.sin(psi)])
    b, r = _as_points(blue), _as_points(red)
    if len(b) < 2 or len(r) < 2:
        raise InsufficientTrackError("not enough mapped cones to explore")
    mid, gaps, dirs = _matched(b, r, gate)
    ahead = (mid - (x, y)) @ fwd > 0.0
    if ahead.sum() < 2:
        raise InsufficientTrackError("fewer than two cone pairs ahead of the vehicle")
    mid, gaps, dirs = mid[ahead], gaps[ahead], dirs[ahead]
    first = int(np.argmin(np.linalg.norm(mid - (x, y), axis=1)))
    order = _chain(mid, dirs, first)
    if len(order) < 2:
        raise InsufficientTrackError("fewer than two chained pairs ahead of the vehicle")
    mid, gaps = mid[order], gaps[order]
    tail = np.array([x, y]) - back * fwd
    pts = np.vstack([tail, mid])
    hw = np.concatenate([[gaps[0] * 0.5], 0.5 * gaps])
    return build_reference(pts, closed=False, ds=ds, half_widths=hw)
