"""Simulated sensors and the camera-to-ground homography.

Every sensor fires on its own period, is silenced inside its dropout windows,
and adds Gaussian noise with the configured standard deviations. The camera
is a detector stand-in: it reports cone color, a confidence and the pixel of
the cone's ground contact point, produced by a pitched pinhole camera over
flat ground.

Homographies use the row-vector convention ``[x', y', w'] = [u, v, 1] @ A``
with ``A[2, 2] == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .errors import DegenerateConfigurationError, ProjectionError

KINDS = ("gnss_pos", "ins", "wheel_speed", "lidar_odom", "cone_scan", "camera_detections")
RED, BLUE = 1, 2
COLOR_CODES = {"red": RED, "blue": BLUE}
COLOR_NAMES = {RED: "red", BLUE: "blue"}
TICK_TOL = 1e-6


@dataclass(frozen=True)
class SensorSchedule:
    """Rates [Hz], noise standard deviations and dropout windows [s]."""

    rates: dict = field(
        default_factory=lambda: {
            "gnss_pos": 10.0,
            "ins": 100.0,
            "wheel_speed": 100.0,
            "lidar_odom": 10.0,
            "cone_scan": 10.0,
            "camera_detections": 10.0,
        }
    )
    gnss_sigma: float = 0.10
    ins_accel_sigma: float = 0.05
    ins_gyro_sigma: float = 0.005
    wheel_sigma: float = 0.05
    lidar_pos_sigma: float = 0.05
    lidar_yaw_sigma: float = 0.01
    cone_point_sigma: float = 0.03
    cone_points_min: int = 5
    cone_points_max: int = 20
    lidar_range: float = 10.0
    lidar_fov_deg: float = 360.0
    pixel_sigma: float = 1.0
    misdetection_rate: float = 0.02
    confidence_beta: tuple = (19.0, 3.0)
    dropouts: dict = field(default_factory=dict)

    def __post_init__(self):
        for kind, rate in self.rates.items():
            if kind not in KINDS:
                raise ValueError(f"unknown sensor kind {kind!r}")
            if not rate > 0:
                raise ValueError(f"rate for {kind} must be positive")
        for kind, windows in self.dropouts.items():
            if kind not in KINDS:
                raise ValueError(f"unknown sensor kind {kind!r} in dropouts")
            ordered = sorted(windows)
            for t0, t1 in ordered:
                if not t1 > t0:
                    raise ValueError(f"empty dropout window ({t0}, {t1}) for {kind}")
            for (a0, a1), (b0, b1) in zip(ordered, ordered[1:]):
                if b0 < a1:
                    raise ValueError(f"overlapping dropout windows for {kind}")

    def is_due(self, kind: str, t: float) -> bool:
        rate = self.rates.get(kind)
        if rate is None:
            return False
        k = t * rate
        return abs(k - round(k)) < TICK_TOL

    def in_dropout(self, kind: str, t: float) -> bool:
        return any(t0 <= t < t1 for t0, t1 in self.dropouts.get(kind, ()))

    def covariance(self, kind: str) -> np.ndarray:
        if kind == "gnss_pos":
            return np.diag([self.gnss_sigma**2] * 2)
        if kind == "ins":
            return np.diag([self.ins_accel_sigma**2] * 2 + [self.ins_gyro_sigma**2])
        if kind == "wheel_speed":
            return np.array([[self.wheel_sigma**2]])
        if kind == "lidar_odom":
            return np.diag([self.lidar_pos_sigma**2] * 2 + [self.lidar_yaw_sigma**2])
        if kind == "cone_scan":
            return np.diag([self.cone_point_sigma**2] * 2)
        if kind == "camera_detections":
            return np.diag([self.pixel_sigma**2] * 2)
        raise ValueError(f"unknown sensor kind {kind!r}")


@dataclass(frozen=True)
class Measurement:
    """One sensor reading.

    Payloads: ``gnss_pos`` (x, y); ``ins`` (a_x, a_y, yaw_rate) in the body
    frame; ``wheel_speed`` (v_x,); ``lidar_odom`` (x, y, psi); ``cone_scan``
    an (n, 2) array of body-frame points; ``camera_detections`` an (n, 4)
    array of (color code, confidence, u, v).
    """

    t: float
    kind: str
    payload: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera mounted ``x_offset`` ahead of the CoG, pitched down."""

    image_width: int = 1280
    image_height: int = 720
    fov_deg: float = 90.0
    mount_height: float = 1.0
    pitch: float = 0.12
    x_offset: float = 0.5
    max_range: float = 15.0

    @property
    def fx(self) -> float:
        return 0.5 * self.image_width / math.tan(math.radians(0.5 * self.fov_deg))

    @property
    def cx(self) -> float:
        return 0.5 * self.image_width

    @property
    def cy(self) -> float:
        return 0.5 * self.image_height


@dataclass(frozen=True)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(m[2, 2]) < 1e-15:
            raise DegenerateConfigurationError("homography with a33 = 0 cannot be normalized")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < 1e-14:
            raise DegenerateConfigurationError("homography is singular")
        object.__setattr__(self, "matrix", m)


def _collinear(p, q, r, tol=1e-9) -> bool:
    area = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    scale = max(np.ptp([p[0], q[0], r[0]]), np.ptp([p[1], q[1], r[1]]), 1.0)
    return abs(area) <= tol * scale * scale


def estimate_homography(pairs) -> Homography:
    """Homography from four (pixel, ground point) correspondences.

    Solves the 8x8 linear system for the entries with ``a33`` fixed to 1.

    Raises:
        DegenerateConfigurationError: three pixel or ground points collinear,
            or the system is rank deficient.
    """
    pairs = [(tuple(map(float, uv)), tuple(map(float, xy))) for uv, xy in pairs]
    if len(pairs) != 4:
        raise ValueError("exactly four point pairs are required")
    for side in (0, 1):
        pts = [p[side] for p in pairs]
        for i in range(4):
            trio = [pts[j] for j in range(4) if j != i]
            if _collinear(*trio):
                raise DegenerateConfigurationError("three calibration points are collinear")
    # unknowns: a11 a21 a31 a12 a22 a32 a13 a23
    A = np.zeros((8, 8))
    b = np.zeros(8)
    for k, ((u, v), (x, y)) in enumerate(pairs):
        A[2 * k] = [u, v, 1.0, 0.0, 0.0, 0.0, -x * u, -x * v]
        A[2 * k + 1] = [0.0, 0.0, 0.0, u, v, 1.0, -y * u, -y * v]
        b[2 * k] = x
        b[2 * k + 1] = y
    if np.linalg.matrix_rank(A) < 8:
        raise DegenerateConfigurationError("calibration system is rank deficient")
    a = np.linalg.solve(A, b)
    mat = np.array(
        [
            [a[0], a[3], a[6]],
            [a[1], a[4], a[7]],
            [a[2], a[5], 1.0],
        ]
    )
    return Homography(mat)


def apply_homography(H: Homography, pixel) -> tuple[float, float]:
    """Map a pixel to the ground plane.

    Raises:
        ProjectionError: the pixel maps to the line at infinity (horizon).
    """
    u, v = float(pixel[0]), float(pixel[1])
    xp, yp, wp = np.array([u, v, 1.0]) @ H.matrix
    scale = np.abs(H.matrix).max() * max(1.0, abs(u), abs(v))
    if abs(wp) <= 1e-12 * scale:
        raise ProjectionError(f"pixel ({u:.1f}, {v:.1f}) projects to infinity")
    return float(xp / wp), float(yp / wp)


def body_to_pixel(xb: float, yb: float, cam: CameraIntrinsics):
    """Pixel of a body-frame ground point, or ``None`` when not visible."""
    dx = xb - cam.x_offset
    dy = yb
    dz = -cam.mount_height
    cp, sp = math.cos(cam.pitch), math.sin(cam.pitch)
    z_c = dx * cp - dz * sp
    x_c = -dy
    y_c = -dx * sp - dz * cp
    if z_c <= 0.1:
        return None
    if math.hypot(dx, dy) > cam.max_range:
        return None
    if abs(math.atan2(dy, dx)) > math.radians(0.5 * cam.fov_deg):
        return None
    u = cam.cx + cam.fx * x_c / z_c
    v = cam.cy + cam.fx * y_c / z_c
    if not (0.0 <= u <= cam.image_width and 0.0 <= v <= cam.image_height):
        return None
    return u, v


def world_to_body(pose, xw: float, yw: float) -> tuple[float, float]:
    x, y, psi = float(pose[0]), float(pose[1]), float(pose[2])
    c, s = math.cos(psi), math.sin(psi)
    dx, dy = xw - x, yw - y
    return c * dx + s * dy, -s * dx + c * dy


def body_to_world(pose, xb, yb):
    x, y, psi = float(pose[0]), float(pose[1]), float(pose[2])
    c, s = math.cos(psi), math.sin(psi)
    xb = np.asarray(xb, dtype=float)
    yb = np.asarray(yb, dtype=float)
    return x + c * xb - s * yb, y + s * xb + c * yb


def camera_model(pose, cone_world, cam: CameraIntrinsics):
    """Pixel bottom-midpoint of a cone seen from ``pose``; ``None`` if not visible."""
    xb, yb = world_to_body(pose, float(cone_world[0]), float(cone_world[1]))
    return body_to_pixel(xb, yb, cam)


CALIBRATION_POINTS = ((4.0, -2.0), (4.0, 2.0), (12.0, -3.0), (12.0, 3.0))


def reference_homography(cam: CameraIntrinsics) -> Homography:
    """Pixel-to-body-ground homography from four calibration points."""
    pairs = []
    for xb, yb in CALIBRATION_POINTS:
        px = body_to_pixel(xb, yb, cam)
        if px is None:
            raise DegenerateConfigurationError(f"calibration point ({xb}, {yb}) not visible")
        pairs.append((px, (xb, yb)))
    return estimate_homography(pairs)


class SensorSampler:
    """Per-episode sensor simulator owning its random stream."""

    def __init__(
        self,
        schedule: SensorSchedule,
        track,
        params: dyn.VehicleParams | None = None,
        camera: CameraIntrinsics | None = None,
        rng: np.random.Generator | None = None,
    ):
        self.schedule = schedule
        self.track = track
        self.params = params or dyn.VehicleParams()
        self.camera = camera or CameraIntrinsics()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._last_t = -math.inf
        cones = track.all_cones()
        self._cone_xy = np.array([(x, y) for x, y, _ in cones])
        self._cone_color = np.array([COLOR_CODES[c] for _, _, c in cones])

    def sample(self, truth, t: float) -> list[Measurement]:
        if t < self._last_t:
            raise ValueError("sensor sampling time went backwards")
        self._last_t = t
        sch = self.schedule
        s = truth.as_array() if isinstance(truth, dyn.VehicleState) else np.asarray(truth, dtype=float)
        out: list[Measurement] = []
        rng = self.rng
        for kind in KINDS:
            if not sch.is_due(kind, t) or sch.in_dropout(kind, t):
                continue
            cov = sch.covariance(kind)
            if kind == "gnss_pos":
                payload = s[[dyn.IX, dyn.IY]] + rng.normal(0.0, sch.gnss_sigma, 2)
            elif kind == "ins":
                d = dyn.derivative(s, (0.0, 0.0), 0.0, self.params)
                ax = d[dyn.IU] - s[dyn.IV] * s[dyn.IR]
                ay = d[dyn.IV] + s[dyn.IU] * s[dyn.IR]
                noise = rng.normal(0.0, 1.0, 3) * np.array([sch.ins_accel_sigma, sch.ins_accel_sigma, sch.ins_gyro_sigma])
                payload = np.array([ax, ay, s[dyn.IR]]) + noise
            elif kind == "wheel_speed":
                payload = np.array([s[dyn.IU] + rng.normal(0.0, sch.wheel_sigma)])
            elif kind == "lidar_odom":
                noise = rng.normal(0.0, 1.0, 3) * np.array([sch.lidar_pos_sigma, sch.lidar_pos_sigma, sch.lidar_yaw_sigma])
                payload = np.array([s[dyn.IX], s[dyn.IY], s[dyn.IPSI]]) + noise
                payload[2] = dyn.wrap_angle(payload[2])
            elif kind == "cone_scan":
                payload = self._cone_scan(s)
            else:
                payload = self._camera(s)
            out.append(Measurement(t=t, kind=kind, payload=payload, cov=cov))
        return out

    def _visible_lidar(self, s):
        c, sn = math.cos(s[dyn.IPSI]), math.sin(s[dyn.IPSI])
        d = self._cone_xy - s[[dyn.IX, dyn.IY]]
        xb = c * d[:, 0] + sn * d[:, 1]
        yb = -sn * d[:, 0] + c * d[:, 1]
        rng_ = np.hypot(xb, yb)
        vis = rng_ <= self.schedule.lidar_range
        if self.schedule.lidar_fov_deg < 360.0:
            vis &= np.abs(np.arctan2(yb, xb)) <= math.radians(0.5 * self.schedule.lidar_fov_deg)
        return xb, yb, vis

    def visible_cones(self, truth) -> tuple[np.ndarray, np.ndarray]:
        """Body-frame positions and color codes of cones within LiDAR range."""
        s = truth.as_array() if isinstance(truth, dyn.VehicleState) else np.asarray(truth, dtype=float)
        xb, yb, vis = self._visible_lidar(s)
        return np.column_stack([xb[vis], yb[vis]]), self._cone_color[vis]

    def _cone_scan(self, s) -> np.ndarray:
        sch = self.schedule
        xb, yb, vis = self._visible_lidar(s)
        chunks = []
        for i in np.flatnonzero(vis):
            n = int(self.rng.integers(sch.cone_points_min, sch.cone_points_max + 1))
            pts = self.rng.normal(0.0, sch.cone_point_sigma, (n, 2)) + (xb[i], yb[i])
            chunks.append(pts)
        return np.vstack(chunks) if chunks else np.zeros((0, 2))

    def _camera(self, s) -> np.ndarray:
        sch = self.schedule
        pose = s[[dyn.IX, dyn.IY, dyn.IPSI]]
        rows = []
        a, b = sch.confidence_beta
        for (xw, yw), color in zip(self._cone_xy, self._cone_color):
            px = camera_model(pose, (xw, yw), self.camera)
            if px is None:
                continue
            conf = float(np.clip(self.rng.beta(a, b), 1e-3, 1.0 - 1e-3))
            reported = color
            if self.rng.random() < sch.misdetection_rate:
                reported = RED if color == BLUE else BLUE
            u = px[0] + self.rng.normal(0.0, sch.pixel_sigma)
            v = px[1] + self.rng.normal(0.0, sch.pixel_sigma)
            rows.append((float(reported), conf, u, v))
        return np.array(rows) if rows else np.zeros((0, 4))


def sample_sensors(truth, track, schedule: SensorSchedule, t: float, rng: np.random.Generator, **kw) -> list[Measurement]:
    """One-shot sampling; prefer ``SensorSampler`` within an episode."""
    return SensorSampler(schedule, track, rng=rng, **kw).sample(truth, t)
