"""Closed-loop episode: plant, sensors, localization, mapping, planning, control.

Mission logic: during lap 1 the car explores at a capped speed behind a
pure-pursuit controller that follows the cone pairs mapped so far. When the
car crosses the start line the whole map is turned into a closed middle line
that stays frozen for the race laps, driven by the selected controller. The
``fixed_path`` mission skips exploration and races the true centerline.

Lap counting and the crash check use ground truth; everything the
controllers see comes from the estimator and the map.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import dynamics as dyn
from .. import planner
from ..control.mpc import MpcController
from ..control.pure_pursuit import PurePursuitController, servo
from ..conenet import Network, lidar_color_probabilities
from ..errors import ConeRaceError, InsufficientTrackError, PlanningError, ProjectionError
from ..estimator import Localizer, initial_belief
from ..gridmap import ConeMap, MappedCone, extract_cones, integrate_detections, suppress_duplicates
from ..perception import detect_cones
from ..sensors import BLUE, RED, CameraIntrinsics, Measurement, SensorSampler, apply_homography, reference_homography
from ..track import ReferencePath, Track, generate_loop, path_frame
from .config import EpisodeConfig, process_noise_matrix

log = logging.getLogger(__name__)

EXPLORE, RACE = "explore", "race"
CRASH_MARGIN = 1.0
EXPLORE_WINDOW = 16.0
MAPPED_TOL = 0.5

TRUTH_COLUMNS = ("t", "tick", "phase", "lap") + dyn.STATE_NAMES + ("e_y_true", "e_psi_true", "s_true", "a_lat", "zeta_f", "J_x", "slack_sideslip")
TELEMETRY_COLUMNS = (
    "t",
    "phase",
    "e_y",
    "e_psi",
    "delta_f",
    "zeta_f",
    "a_x",
    "J_x",
    "alpha_f",
    "alpha_r",
    "slack_sideslip_norm",
    "slack_env_norm",
    "iterations",
    "status",
)


@dataclass
class EpisodeLog:
    """Everything recorded during one run."""

    config: EpisodeConfig
    track: Track
    truth: list = field(default_factory=list)
    belief: list = field(default_factory=list)
    telemetry: list = field(default_factory=list)
    measurements: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "running"
    message: str = ""
    cone_map: ConeMap | None = None
    reference: ReferencePath | None = None
    mapped_fraction: float = math.nan

    def truth_array(self) -> np.ndarray:
        """Numeric truth columns (phase encoded 0 explore / 1 race)."""
        rows = [[r[0], r[1], 1.0 if r[2] == RACE else 0.0, *r[3:]] for r in self.truth]
        return np.array(rows, dtype=float).reshape(-1, len(TRUTH_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        return self.truth_array()[:, TRUTH_COLUMNS.index(name)]

    def lap_times(self) -> list[float]:
        crossings = [t for t, ev, _ in self.events if ev == "lap"]
        starts = [0.0] + crossings
        return [b - a for a, b in zip(starts, starts[1:])]

    def race_start(self) -> float | None:
        for t, ev, _ in self.events:
            if ev == "race_start":
                return t
        return None

    def mapped_cones(self, threshold: float | None = None) -> list[MappedCone]:
        if self.cone_map is None:
            return []
        if threshold is None:
            return map_cones(self.cone_map, self.config)
        return extract_cones(self.cone_map, threshold)


def load_track(cfg: EpisodeConfig) -> Track:
    if cfg.track_file:
        return Track.from_csv(cfg.track_file)
    return generate_loop(cfg.track, seed=cfg.effective_track_seed)


def start_pose(track: Track) -> tuple[float, float, float]:
    if track.primitives:
        return tuple(float(v) for v in track.start)
    c = track.centerline
    return float(c[0, 0]), float(c[0, 1]), math.atan2(c[1, 1] - c[0, 1], c[1, 0] - c[0, 0])


def true_reference(track: Track) -> ReferencePath:
    return track.reference_path(ds=0.1) if track.primitives else track.reference_path()


def _stamp(cfg: EpisodeConfig) -> np.ndarray:
    e, c = cfg.mapping.stamp_edge, cfg.mapping.stamp_corner
    return np.array([[c, e, c], [e, 1.0, e], [c, e, c]])


def new_map(cfg: EpisodeConfig) -> ConeMap:
    return ConeMap(resolution=cfg.mapping.resolution, s_max=cfg.mapping.s_max, stamp=_stamp(cfg))


def _clip_p(p: float) -> float:
    return min(max(float(p), 1e-6), 1.0 - 1e-6)


class Perception:
    """Turns cone scans and camera detections into map evidence."""

    def __init__(self, cfg: EpisodeConfig, cmap: ConeMap):
        self.cfg = cfg
        self.cmap = cmap
        self.camera = CameraIntrinsics()
        self.homography = reference_homography(self.camera)
        self.net = Network.load(cfg.mapping.conenet_model) if cfg.mapping.conenet_model else None

    def integrate(self, meas: list[Measurement], pose) -> None:
        dets = []
        for m in meas:
            if m.kind == "cone_scan":
                cones = detect_cones(m.payload)
                if self.net is not None and len(cones):
                    colors, conf = lidar_color_probabilities(self.net, cones)
                else:
                    colors, conf = np.zeros(len(cones), dtype=np.int64), np.zeros(len(cones))
                for (x, y), c, p in zip(cones, colors, conf):
                    if c in (RED, BLUE):
                        dets.append((x, y, int(c), _clip_p(p)))
                    else:
                        dets.append((x, y, None, self.cfg.mapping.lidar_confidence))
            elif m.kind == "camera_detections":
                for color, conf, u, v in np.asarray(m.payload).reshape(-1, 4):
                    try:
                        xb, yb = apply_homography(self.homography, (u, v))
                    except ProjectionError:
                        continue
                    if not (0.0 < xb <= self.camera.max_range):
                        continue
                    dets.append((xb, yb, int(color), _clip_p(conf)))
        if dets:
            integrate_detections(self.cmap, dets, pose=pose)


def map_cones(cmap: ConeMap, cfg: EpisodeConfig, window=None) -> list[MappedCone]:
    return suppress_duplicates(extract_cones(cmap, cfg.mapping.threshold, window=window), cfg.mapping.suppress_radius)


def _split_cones(cones: list[MappedCone]):
    blue = np.array([(c.x, c.y) for c in cones if c.color == BLUE]).reshape(-1, 2)
    red = np.array([(c.x, c.y) for c in cones if c.color == RED]).reshape(-1, 2)
    return blue, red


def mapped_fraction(track: Track, cones: list[MappedCone], tol: float = MAPPED_TOL) -> float:
    """Share of true cones with a same-colored mapped cone within ``tol``."""
    hits = 0
    total = 0
    for pts, color in ((track.blue_cones, BLUE), (track.red_cones, RED)):
        mine = np.array([(c.x, c.y) for c in cones if c.color == color]).reshape(-1, 2)
        total += len(pts)
        if len(mine):
            d = np.linalg.norm(pts[:, None, :] - mine[None, :, :], axis=2).min(axis=1)
            hits += int((d <= tol).sum())
    return hits / max(total, 1)


def _wrap_ds(ds: float, length: float) -> float:
    return (ds + 0.5 * length) % length - 0.5 * length


def run_episode(cfg: EpisodeConfig, track: Track | None = None) -> EpisodeLog:
    """Simulate one episode; deterministic for a given config."""
    track = load_track(cfg) if track is None else track
    params = cfg.vehicle
    lg = EpisodeLog(config=cfg, track=track)
    truth_path = true_reference(track)
    L = truth_path.length
    half_width = 0.5 * track.width

    ss = np.random.SeedSequence(cfg.seed)
    sensor_rng = np.random.default_rng(ss.spawn(1)[0])
    sampler = SensorSampler(cfg.sensors, track, params, rng=sensor_rng)
    pose0 = start_pose(track)
    x = np.zeros(dyn.STATE_DIM)
    x[[dyn.IX, dyn.IY, dyn.IPSI]] = pose0
    x[dyn.IU] = cfg.initial_speed
    ey, epsi, s_prev = path_frame(truth_path, pose0)
    x[dyn.IEY], x[dyn.IEPSI] = ey, epsi
    loc = Localizer(initial_belief(pose0, cfg.initial_speed), cfg.sensors, process_noise_matrix(cfg))
    use_ekf = cfg.localization == "ekf"

    cmap = new_map(cfg)
    lg.cone_map = cmap
    perception = Perception(cfg, cmap) if cfg.mission == "two_lap" else None
    explorer = PurePursuitController(params, cfg.pure_pursuit)
    if cfg.controller == "mpc":
        racer = MpcController(params, cfg.mpc)
    else:
        racer = PurePursuitController(params, cfg.pure_pursuit)

    phase = EXPLORE
    race_path: ReferencePath | None = None
    race_lap0 = 0
    if cfg.mission == "fixed_path":
        phase = RACE
        race_path = truth_path
        lg.reference = race_path
        lg.events.append((0.0, "race_start", "fixed_path"))
    explore_path: ReferencePath | None = None
    cmd = dyn.ControlRates(0.0, 0.0)
    slack_now = 0.0
    progress = 0.0
    lap = 0
    dt = cfg.plant_dt
    n_steps = int(math.floor(cfg.duration / dt + 1e-9))

    def sense(tick: int, t: float):
        meas = sampler.sample(x, t) if (use_ekf or perception is not None) else []
        for m in meas:
            lg.measurements.append((tick, m))
        if use_ekf:
            b = loc.step(meas, t_end=t)
            mean, cov = b.mean, b.cov
        else:
            mean = x[[dyn.IX, dyn.IY, dyn.IPSI, dyn.IU, dyn.IV, dyn.IR]].copy()
            cov = np.zeros((6, 6))
        lg.belief.append((tick, t, *mean, *np.diag(cov)))
        if perception is not None and phase == EXPLORE:
            perception.integrate(meas, mean[:3])
        return mean

    def estimate(mean, path):
        est = x.copy()
        est[[dyn.IX, dyn.IY, dyn.IPSI, dyn.IU, dyn.IV, dyn.IR]] = mean
        est[dyn.IU] = max(est[dyn.IU], params.U_min)
        e_y, e_psi, s = path_frame(path, mean[:3])
        est[dyn.IEY], est[dyn.IEPSI] = e_y, e_psi
        return est, s

    def telemetry(t, est, c, sol=None):
        try:
            af, ar = dyn.slip_angles(x, params)
        except ConeRaceError:
            af = ar = math.nan
        row = [t, phase, est[dyn.IEY], est[dyn.IEPSI], x[dyn.IDELTA], c.zeta_f, x[dyn.IAX], c.J_x, af, ar]
        if sol is not None:
            row += [float(np.linalg.norm(sol.slack_sideslip)), float(np.linalg.norm(sol.slack_env)), sol.iterations, sol.status]
        else:
            row += [0.0, 0.0, 0, "n/a"]
        lg.telemetry.append(tuple(row))

    def explore_command(t, mean):
        nonlocal explore_path
        bx, by = mean[0], mean[1]
        win = (bx - EXPLORE_WINDOW, by - EXPLORE_WINDOW, bx + EXPLORE_WINDOW, by + EXPLORE_WINDOW)
        blue, red = _split_cones(map_cones(cmap, cfg, window=win))
        try:
            explore_path = planner.exploration_reference(blue, red, mean[:3])
        except (InsufficientTrackError, PlanningError):
            pass
        if explore_path is None:
            c = servo(x, 0.0, min(max(cfg.lap1_speed_cap - mean[3], params.a_min), params.a_max), params, cfg.pure_pursuit.servo_tau)
            telemetry(t, x, c)
            return c
        est, _ = estimate(mean, explore_path)
        c = explorer.step(est, explore_path, speed_target=cfg.lap1_speed_cap)
        telemetry(t, est, c)
        return c

    def race_command(t, mean):
        nonlocal slack_now
        est, s = estimate(mean, race_path)
        if isinstance(racer, MpcController):
            c, sol = racer.step(est, race_path, s0=s)
            slack_now = float(sol.slack_sideslip[0])
            telemetry(t, est, c, sol)
            return c
        c = racer.step(est, race_path)
        telemetry(t, est, c)
        return c

    def freeze(t, mean) -> bool:
        nonlocal race_path, phase, race_lap0
        cones = map_cones(cmap, cfg)
        lg.mapped_fraction = mapped_fraction(track, cones)
        blue, red = _split_cones(cones)
        try:
            ref = planner.reference_from_cones(blue, red, closed=True, start=mean[:2])
        except (InsufficientTrackError, PlanningError) as exc:
            lg.events.append((t, "freeze_failed", str(exc)))
            return False
        race_path = ref
        lg.reference = ref
        phase = RACE
        race_lap0 = lap
        lg.events.append((t, "race_start", f"mapped_fraction={lg.mapped_fraction!r}"))
        return True

    mean = sense(0, 0.0)
    status = "timeout"
    message = ""
    try:
        for k in range(n_steps):
            t = k * dt
            if k % cfg.control_every == 0:
                cmd = explore_command(t, mean) if phase == EXPLORE else race_command(t, mean)
            d = dyn.derivative(x, cmd, truth_path.curvature_at(s_prev), params)
            a_lat = float(d[dyn.IV] + x[dyn.IU] * x[dyn.IR])
            lg.truth.append((t, k, phase, lap, *x, ey, epsi, s_prev, a_lat, cmd.zeta_f, cmd.J_x, slack_now))
            x = dyn.step(x, cmd, truth_path.curvature_at(s_prev), dt, params)
            t1 = (k + 1) * dt
            ey, epsi, s = path_frame(truth_path, x[[dyn.IX, dyn.IY, dyn.IPSI]])
            x[dyn.IEY], x[dyn.IEPSI] = ey, epsi
            progress += _wrap_ds(s - s_prev, L)
            s_prev = s
            if abs(ey) > half_width + CRASH_MARGIN:
                status, message = "crash", f"left the corridor by {abs(ey) - half_width:.2f} m at t={t1:.2f}"
                lg.events.append((t1, "crash", message))
                break
            mean = sense(k + 1, t1)
            if progress >= (lap + 1) * L:
                lap += 1
                lg.events.append((t1, "lap", str(lap)))
                if phase == EXPLORE:
                    freeze(t1, mean)
                elif lap - race_lap0 >= cfg.race_laps:
                    status = "completed"
                    break
    except ConeRaceError as exc:
        status, message = "error", f"{type(exc).__name__}: {exc}"
        lg.events.append((lg.truth[-1][0] if lg.truth else 0.0, "error", message))
    lg.status = status
    lg.message = message
    return lg


def write_and_run(cfg: EpisodeConfig, out: Path) -> EpisodeLog:
    from .io import write_run

    lg = run_episode(cfg)
    write_run(lg, out)
    return lg
