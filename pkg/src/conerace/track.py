"""Closed cone tracks and path-relative geometry.

Tracks are built from circular arcs and straights, so the centerline
curvature is known exactly. Random loops turn monotonically left
(counter-clockwise travel); the turn angles sum to 2*pi, which makes every
generated loop a simple convex curve. Closure is enforced by solving a
non-negative least-squares problem for the straight lengths.

Cone convention: blue on the left of travel, red on the right.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from .dynamics import wrap_angle
from .errors import OffTrackError, TrackGenerationError

CONE_RADIUS = 0.15
OFF_TRACK_DISTANCE = 10.0


@dataclass(frozen=True)
class TrackSpec:
    """Loop generator settings.

    ``shape`` is one of ``"random"``, ``"circle"`` (radius ``min_radius``)
    or ``"stadium"`` (two half-circles of ``min_radius`` joined by straights
    of ``straight_length``).
    """

    n_segments: int = 6
    min_radius: float = 8.0
    width: float = 4.0
    spacing: float = 5.0
    shape: str = "random"
    straight_length: float = 30.0
    max_radius_factor: float = 2.5
    max_straight: float = 15.0


def benchmark_spec() -> TrackSpec:
    """The controller-comparison loop: a stadium of ~200 m lap length."""
    return TrackSpec(shape="stadium", min_radius=20.0, straight_length=37.2, width=4.0, spacing=5.0)


@dataclass(frozen=True)
class Primitive:
    length: float
    kappa: float


@dataclass
class Track:
    """A closed loop with paired cones.

    ``primitives`` (arc/straight pieces starting at ``start``) are present for
    generated tracks; tracks loaded from CSV only carry cones.
    """

    blue_cones: np.ndarray
    red_cones: np.ndarray
    width: float
    spacing: float
    primitives: tuple[Primitive, ...] = ()
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    centerline: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.blue_cones = np.asarray(self.blue_cones, dtype=float).reshape(-1, 2)
        self.red_cones = np.asarray(self.red_cones, dtype=float).reshape(-1, 2)
        if self.centerline is None:
            if self.primitives:
                self.centerline = sample_primitives(self.primitives, self.start, 0.5)[:, :2]
            else:
                self.centerline = 0.5 * (self.blue_cones + self.red_cones)
            self.centerline = np.vstack([self.centerline, self.centerline[:1]])

    @property
    def length(self) -> float:
        if self.primitives:
            return float(sum(p.length for p in self.primitives))
        d = np.diff(self.centerline, axis=0)
        return float(np.hypot(d[:, 0], d[:, 1]).sum())

    @property
    def min_radius(self) -> float:
        ks = [abs(p.kappa) for p in self.primitives if p.kappa != 0.0]
        return 1.0 / max(ks) if ks else math.inf

    def reference_path(self, ds: float = 0.1) -> "ReferencePath":
        if self.primitives:
            return reference_from_primitives(self.primitives, self.start, self.width, ds)
        from .planner import build_reference

        return build_reference(
            0.5 * (self.blue_cones + self.red_cones),
            closed=True,
            blue=self.blue_cones,
            red=self.red_cones,
        )

    def all_cones(self) -> list[tuple[float, float, str]]:
        out = [(float(x), float(y), "blue") for x, y in self.blue_cones]
        out += [(float(x), float(y), "red") for x, y in self.red_cones]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "color"])
            for b, r in zip(self.blue_cones, self.red_cones):
                w.writerow([repr(float(b[0])), repr(float(b[1])), "blue"])
                w.writerow([repr(float(r[0])), repr(float(r[1])), "red"])

    @classmethod
    def from_csv(cls, path) -> "Track":
        blue, red = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                pt = (float(row["x"]), float(row["y"]))
                color = row["color"].strip().lower()
                if color == "blue":
                    blue.append(pt)
                elif color == "red":
                    red.append(pt)
                else:
                    raise ValueError(f"unknown cone color {row['color']!r} in {path}")
        if len(blue) != len(red) or len(blue) < 3:
            raise ValueError(f"{path}: expected matching blue/red cone rows, got {len(blue)}/{len(red)}")
        blue_a, red_a = np.array(blue), np.array(red)
        width = float(np.mean(np.linalg.norm(blue_a - red_a, axis=1)))
        mid = 0.5 * (blue_a + red_a)
        gaps = np.linalg.norm(np.diff(np.vstack([mid, mid[:1]]), axis=0), axis=1)
        return cls(blue_a, red_a, width=width, spacing=float(gaps.mean()))


def _advance(x, y, h, prim: Primitive, t):
    """Pose after travelling ``t`` along ``prim`` from (x, y, h); ``t`` may be an array."""
    k = prim.kappa
    if k == 0.0:
        return x + t * np.cos(h), y + t * np.sin(h), h + 0.0 * t
    hn = h + k * t
    return x + (np.sin(hn) - math.sin(h)) / k, y - (np.cos(hn) - math.cos(h)) / k, hn


def primitive_starts(primitives, start):
    poses = []
    x, y, h = start
    for p in primitives:
        poses.append((x, y, h))
        x, y, h = (float(v) for v in _advance(x, y, h, p, p.length))
    return poses, (x, y, h)


def sample_primitives(primitives, start, ds: float) -> np.ndarray:
    """Samples ``(x, y, heading, kappa, s)`` every ~``ds`` over [0, L)."""
    total = sum(p.length for p in primitives)
    n = max(int(math.ceil(total / ds)), 8)
    s = np.arange(n) * (total / n)
    return np.column_stack([sample_primitives_at(primitives, start, s), s])


def _place_cones(primitives, start, width, spacing):
    total = sum(p.length for p in primitives)
    n = int(math.ceil(total / spacing - 1e-9))
    samples = sample_primitives_at(primitives, start, np.arange(n) * (total / n))
    x, y, h = samples[:, 0], samples[:, 1], samples[:, 2]
    nx, ny = -np.sin(h), np.cos(h)
    half = 0.5 * width
    blue = np.column_stack([x + half * nx, y + half * ny])
    red = np.column_stack([x - half * nx, y - half * ny])
    return blue, red


def sample_primitives_at(primitives, start, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    bounds = np.cumsum([0.0] + [p.length for p in primitives])
    idx = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(primitives) - 1)
    starts, _ = primitive_starts(primitives, start)
    out = np.empty((len(s), 4))
    for i, prim in enumerate(primitives):
        m = idx == i
        if not m.any():
            continue
        x0, y0, h0 = starts[i]
        xs, ys, hs = _advance(x0, y0, h0, prim, s[m] - bounds[i])
        out[m, 0], out[m, 1], out[m, 2], out[m, 3] = xs, ys, hs, prim.kappa
    return out


def _min_same_side_gap(cones: np.ndarray) -> float:
    d = np.linalg.norm(cones[:, None, :] - cones[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(d.min())


def _random_primitives(spec: TrackSpec, rng: np.random.Generator) -> list[Primitive]:
    n = spec.n_segments
    r_lo = max(spec.min_radius, 1.25 * spec.width)
    angles = rng.dirichlet(np.full(n, 2.0)) * 2.0 * math.pi
    radii = rng.uniform(r_lo, spec.max_radius_factor * r_lo, size=n)
    straights0 = rng.uniform(0.0, spec.max_straight, size=n)
    # straight i follows arc i; its heading is the cumulative turn so far
    heading = np.cumsum(angles)
    dirs = np.vstack([np.cos(heading), np.sin(heading)])
    x, y, h = 0.0, 0.0, 0.0
    arc_sum = np.zeros(2)
    for a, R in zip(angles, radii):
        nx, ny, h = _advance(x, y, h, Primitive(R * a, 1.0 / R), R * a)
        arc_sum += (float(nx) - x, float(ny) - y)
        x, y = float(nx), float(ny)
    target = -(arc_sum + dirs @ straights0)
    extra, resid = nnls(dirs, target)
    if resid > 1e-9:
        raise TrackGenerationError(f"loop closure residual {resid:.3g}")
    lengths = straights0 + extra
    prims: list[Primitive] = []
    for a, R, L in zip(angles, radii, lengths):
        prims.append(Primitive(float(R * a), float(1.0 / R)))
        if L > 1e-9:
            prims.append(Primitive(float(L), 0.0))
    return prims


def generate_loop(spec: TrackSpec, seed: int = 0, max_retries: int = 50) -> Track:
    """Generate a closed cone track.

    Raises:
        ValueError: spec outside the supported range.
        TrackGenerationError: no valid loop after ``max_retries`` attempts.
    """
    if spec.min_radius < 4.0 or spec.width < 3.0:
        raise ValueError("track spec requires min_radius >= 4 m and width >= 3 m")
    if spec.spacing <= 0:
        raise ValueError("spacing must be positive")
    rng = np.random.default_rng(seed)
    last_err = "no attempt"
    for _ in range(max_retries):
        if spec.shape == "circle":
            R = spec.min_radius
            prims = [Primitive(2.0 * math.pi * R, 1.0 / R)]
        elif spec.shape == "stadium":
            R, L = spec.min_radius, spec.straight_length
            prims = [
                Primitive(L, 0.0),
                Primitive(math.pi * R, 1.0 / R),
                Primitive(L, 0.0),
                Primitive(math.pi * R, 1.0 / R),
            ]
        elif spec.shape == "random":
            if spec.n_segments < 2:
                raise ValueError("random loops need n_segments >= 2")
            try:
                prims = _random_primitives(spec, rng)
            except TrackGenerationError as exc:
                last_err = str(exc)
                continue
        else:
            raise ValueError(f"unknown track shape {spec.shape!r}")
        if min(1.0 / abs(p.kappa) for p in prims if p.kappa) < 0.5 * spec.width + CONE_RADIUS:
            raise TrackGenerationError("radius too small for the track width")
        start = (0.0, 0.0, 0.0)
        _, end = primitive_starts(prims, start)
        if math.hypot(end[0], end[1]) > 1e-6:
            last_err = f"loop not closed ({end[0]:.2e}, {end[1]:.2e})"
            continue
        blue, red = _place_cones(prims, start, spec.width, spec.spacing)
        gap = min(_min_same_side_gap(blue), _min_same_side_gap(red))
        if gap < 0.5 * spec.spacing:
            last_err = f"same-side cones {gap:.2f} m apart"
            if spec.shape != "random":
                break
            continue
        return Track(blue, red, width=spec.width, spacing=spec.spacing, primitives=tuple(prims), start=start)
    raise TrackGenerationError(f"could not generate a valid loop: {last_err}")


@dataclass
class ReferencePath:
    """Arc-length sampled path with curvature and a lateral corridor.

    ``closed`` paths wrap: the last sample connects back to the first and
    ``length`` includes that closing segment.
    """

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    kappa: np.ndarray
    ey_min: np.ndarray
    ey_max: np.ndarray
    closed: bool = True

    def __post_init__(self):
        for name in ("s", "x", "y", "heading", "kappa", "ey_min", "ey_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(np.diff(self.s) <= 0):
            raise ValueError("reference path arc length must be strictly increasing")
        if np.any(self.ey_min > 0) or np.any(self.ey_max < 0):
            raise ValueError("corridor must contain the path")
        self.heading = np.unwrap(self.heading)
        px, py = self._poly()
        d = np.column_stack([np.diff(px), np.diff(py)])
        self._seg_start = np.column_stack([px[:-1], py[:-1]])
        self._seg_vec = d
        self._seg_len2 = np.maximum((d * d).sum(axis=1), 1e-300)
        seg_len = np.sqrt(self._seg_len2)
        self._seg_s = np.concatenate([[self.s[0]], self.s[0] + np.cumsum(seg_len)])
        # arc length is the polyline length, so projection and lookup agree
        self.s = self._seg_s[: len(self.x)].copy()

    def _poly(self):
        if self.closed:
            return np.append(self.x, self.x[0]), np.append(self.y, self.y[0])
        return self.x, self.y

    @property
    def length(self) -> float:
        return float(self._seg_s[-1] - self._seg_s[0])

    def _wrap_s(self, s):
        if self.closed:
            return self.s[0] + np.mod(np.asarray(s, dtype=float) - self.s[0], self.length)
        return np.asarray(s, dtype=float)

    def _grid(self, values, wrap_value=None):
        """Append the closing sample so interpolation spans the full loop."""
        grid = self._seg_s
        if self.closed:
            last = values[0] if wrap_value is None else wrap_value
            return grid, np.append(values, last)
        return grid, values

    def _check_range(self, s):
        if not self.closed:
            s_arr = np.asarray(s, dtype=float)
            if np.any(s_arr < self.s[0] - 1e-9) or np.any(s_arr > self._seg_s[-1] + 1e-9):
                raise ValueError(f"s outside [{self.s[0]}, {self._seg_s[-1]}]")

    def curvature_at(self, s):
        self._check_range(s)
        grid, vals = self._grid(self.kappa)
        out = np.interp(self._wrap_s(s), grid, vals)
        return float(out) if np.ndim(out) == 0 else out

    def corridor_at(self, s):
        grid, lo = self._grid(self.ey_min)
        _, hi = self._grid(self.ey_max)
        ss = self._wrap_s(s)
        return np.interp(ss, grid, lo), np.interp(ss, grid, hi)

    def heading_at(self, s):
        wrap_value = None
        if self.closed:
            turns = round((self.heading[-1] - self.heading[0]) / (2.0 * math.pi))
            wrap_value = self.heading[0] + 2.0 * math.pi * turns
        grid, vals = self._grid(self.heading, wrap_value=wrap_value)
        return np.interp(self._wrap_s(s), grid, vals)

    def point_at(self, s):
        grid = self._seg_s
        px, py = self._poly()
        ss = self._wrap_s(s)
        return np.interp(ss, grid, px), np.interp(ss, grid, py)

    def project(self, px: float, py: float) -> tuple[float, float, int, float]:
        """Closest point on the polyline: ``(s, signed offset, segment, distance)``."""
        q = np.array([px, py])
        rel = q - self._seg_start
        t = np.clip((rel * self._seg_vec).sum(axis=1) / self._seg_len2, 0.0, 1.0)
        foot = self._seg_start + t[:, None] * self._seg_vec
        dist2 = ((q - foot) ** 2).sum(axis=1)
        i = int(np.argmin(dist2))
        seg = self._seg_vec[i]
        seg_len = math.sqrt(self._seg_len2[i])
        cross = seg[0] * rel[i, 1] - seg[1] * rel[i, 0]
        s = self._seg_s[i] + t[i] * seg_len
        if self.closed and s >= self._seg_s[-1]:
            s -= self.length
        return float(s), float(cross / seg_len), i, math.sqrt(float(dist2[i]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "x", "y", "heading", "kappa", "ey_min", "ey_max"])
            for row in zip(self.s, self.x, self.y, self.heading, self.kappa, self.ey_min, self.ey_max):
                w.writerow([repr(float(v)) for v in row])


def path_frame(path: ReferencePath, pose) -> tuple[float, float, float]:
    """Path-relative coordinates ``(e_y, e_psi, s)`` of a pose ``(x, y, psi)``.

    ``e_y`` is positive to the left of the path direction. Equidistant
    candidates resolve to the smallest arc length.

    Raises:
        OffTrackError: the pose is more than 10 m from the path.
    """
    x, y, psi = float(pose[0]), float(pose[1]), float(pose[2])
    s, ey, _, dist = path.project(x, y)
    if dist > OFF_TRACK_DISTANCE:
        raise OffTrackError(f"pose ({x:.2f}, {y:.2f}) is {dist:.2f} m from the path")
    h = float(path.heading_at(s))
    return ey, wrap_angle(psi - h), s


def curvature_at(path: ReferencePath, s: float) -> float:
    """Path curvature at arc length ``s`` (linear between samples).

    Raises:
        ValueError: ``s`` outside an open path.
    """
    if not path.closed and not (path.s[0] <= s <= path.s[0] + path.length):
        raise ValueError(f"s={s} outside path range")
    return float(path.curvature_at(s))


def reference_from_primitives(primitives, start, width: float, ds: float = 0.1) -> ReferencePath:
    smp = sample_primitives(primitives, start, ds)
    half = 0.5 * width - CONE_RADIUS
    n = len(smp)
    return ReferencePath(
        s=smp[:, 4],
        x=smp[:, 0],
        y=smp[:, 1],
        heading=smp[:, 2],
        kappa=smp[:, 3],
        ey_min=np.full(n, -half),
        ey_max=np.full(n, half),
        closed=True,
    )


def write_track(track: Track, path) -> Path:
    p = Path(path)
    track.to_csv(p)
    return p
