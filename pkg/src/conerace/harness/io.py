"""Run directories: writing episode logs and replaying logged measurements.

Every file is plain text with ``repr`` floats, so a run written twice from
the same config is byte-identical. ``README.md`` inside the directory
documents the columns.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import MetricsError
from ..estimator import Localizer, initial_belief
from ..gridmap import write_pgm
from ..sensors import COLOR_NAMES, Measurement
from .config import EpisodeConfig, dump, load, process_noise_matrix
from .episode import TELEMETRY_COLUMNS, TRUTH_COLUMNS, EpisodeLog, load_track, start_pose
from .metrics import METRIC_NAMES, compute_metrics, metrics_row

BELIEF_COLUMNS = ("tick", "t", "x", "y", "theta", "v_x", "v_y", "r") + tuple(
    f"var_{k}" for k in ("x", "y", "theta", "v_x", "v_y", "r")
)
MEASUREMENT_COLUMNS = ("tick", "t", "kind", "rows", "cols", "values", "cov")

RUN_README = """# Run output

All floats are written with full precision. Times are in seconds, lengths
in meters, angles in radians.

- `config.ini`: the complete configuration; `conerace sim --config config.ini`
  reproduces this directory.
- `truth.csv`: plant state every plant step. `phase` is `explore` or `race`,
  `lap` counts completed laps, `e_y_true`/`e_psi_true`/`s_true` are relative to
  the true centerline, `a_lat` is `dV/dt + U r`, `zeta_f`/`J_x` are the held
  commands and `slack_sideslip` is the MPC sideslip slack of the active command.
- `belief.csv`: EKF mean `[x, y, theta, v_x, v_y, r]` and the diagonal of its
  covariance after each plant step.
- `measurements.csv`: one row per sensor reading. `values` is the payload
  flattened row-major into `rows` x `cols` numbers; `cov` is the flattened
  noise covariance.
- `telemetry.csv`: one row per control step: estimated path errors, commands,
  slip angles, MPC slack norms, QP iterations and status.
- `cones.csv`: cones extracted from the final map (`strength` is the log-odds
  sum of the blob).
- `map_red.pgm`, `map_blue.pgm`: log-odds channels as graymaps, top row =
  largest y.
- `reference.csv`: the frozen race path (`s, x, y, heading, kappa, ey_min,
  ey_max`).
- `track.csv`: the true cones.
- `events.csv`: lap crossings, the map freeze, crashes and errors.
- `metrics.csv`: race-phase metrics on ground truth (empty when the run never
  reached the race phase).
"""


def _f(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f(v) for v in row])


def measurement_row(tick: int, m: Measurement) -> list[str]:
    p = np.atleast_2d(np.asarray(m.payload, dtype=float))
    rows, cols = p.shape
    vals = " ".join(repr(float(v)) for v in p.ravel())
    cov = " ".join(repr(float(v)) for v in np.asarray(m.cov, dtype=float).ravel())
    return [str(tick), repr(float(m.t)), m.kind, str(rows), str(cols), vals, cov]


def parse_measurement(row: dict) -> tuple[int, Measurement]:
    rows, cols = int(row["rows"]), int(row["cols"])
    vals = np.array([float(v) for v in row["values"].split()], dtype=float)
    if vals.size != rows * cols:
        raise ValueError(f"measurement at tick {row['tick']} has {vals.size} values for a {rows}x{cols} payload")
    payload = vals.reshape(rows, cols)
    if rows == 1 and row["kind"] not in ("cone_scan", "camera_detections"):
        payload = payload[0]
    cov = np.array([float(v) for v in row["cov"].split()], dtype=float)
    n = int(round(math.sqrt(cov.size)))
    return int(row["tick"]), Measurement(float(row["t"]), row["kind"], payload, cov.reshape(n, n))


def write_run(log: EpisodeLog, out) -> Path:
    """Write every artifact of ``log`` into directory ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump(log.config))
    (out / "README.md").write_text(RUN_README)
    _write_rows(out / "truth.csv", TRUTH_COLUMNS, log.truth)
    _write_rows(out / "belief.csv", BELIEF_COLUMNS, log.belief)
    _write_rows(out / "telemetry.csv", TELEMETRY_COLUMNS, log.telemetry)
    _write_rows(out / "events.csv", ("t", "event", "detail"), log.events)
    with open(out / "measurements.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_COLUMNS)
        for tick, m in log.measurements:
            w.writerow(measurement_row(tick, m))
    cones = log.mapped_cones()
    _write_rows(out / "cones.csv", ("x", "y", "color", "strength"), ((c.x, c.y, COLOR_NAMES[c.color], c.strength) for c in cones))
    if log.cone_map is not None:
        write_pgm(log.cone_map.red, out / "map_red.pgm", log.cone_map.s_max)
        write_pgm(log.cone_map.blue, out / "map_blue.pgm", log.cone_map.s_max)
    if log.reference is not None:
        log.reference.to_csv(out / "reference.csv")
    log.track.to_csv(out / "track.csv")
    write_metrics(out / "metrics.csv", [(log.config.controller, log)])
    return out


def write_metrics(path, runs) -> None:
    """One row per ``(label, log)``; runs without a race phase get empty fields."""
    rows = []
    for label, log in runs:
        try:
            m = metrics_row(compute_metrics(log))
        except MetricsError:
            m = {k: "" for k in METRIC_NAMES}
        rows.append([label, log.status] + [m[k] for k in METRIC_NAMES])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("controller", "status") + METRIC_NAMES)
        w.writerows(rows)


def read_measurements(path) -> dict[int, list[Measurement]]:
    by_tick: dict[int, list[Measurement]] = defaultdict(list)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tick, m = parse_measurement(row)
            by_tick[tick].append(m)
    return dict(by_tick)


def read_belief(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def replay(run_dir, n_ticks: int | None = None) -> np.ndarray:
    """Re-run the estimator over a run directory's measurement log.

    Rows are ``(tick, t, mean..., var...)`` like ``belief.csv``. The tick
    count defaults to the length of ``belief.csv`` (or the last logged
    measurement when there is none).
    """
    run_dir = Path(run_dir)
    cfg: EpisodeConfig = load(run_dir / "config.ini")
    meas = read_measurements(run_dir / "measurements.csv")
    if n_ticks is None:
        bp = run_dir / "belief.csv"
        n_ticks = len(read_belief(bp)) if bp.is_file() else max(meas, default=-1) + 1
    track = load_track(cfg)
    loc = Localizer(initial_belief(start_pose(track), cfg.initial_speed), cfg.sensors, process_noise_matrix(cfg))
    out = np.zeros((n_ticks, len(BELIEF_COLUMNS)))
    for k in range(n_ticks):
        t = k * cfg.plant_dt
        b = loc.step(meas.get(k, []), t_end=t)
        out[k] = (k, t, *b.mean, *np.diag(b.cov))
    return out


def write_belief(path, rows: np.ndarray) -> None:
    _write_rows(Path(path), BELIEF_COLUMNS, ([int(r[0]), *r[1:]] for r in rows))
