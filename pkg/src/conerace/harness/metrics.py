"""Episode performance metrics.

All metrics are averages over the race phase (laps after the map freeze, or
the whole run for the ``fixed_path`` mission), computed from ground truth by
default. ``on_belief`` swaps the lateral error for the estimate the
controller saw.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import MetricsError
from .episode import TELEMETRY_COLUMNS, TRUTH_COLUMNS, EpisodeLog

METRIC_NAMES = (
    "std_lat_accel",
    "mean_abs_ey",
    "avg_speed",
    "mean_abs_sideslip",
    "max_abs_alpha_r",
    "max_alpha_r_excess",
    "lap_times",
)


@dataclass(frozen=True)
class Metrics:
    """Race-phase summary.

    ``max_alpha_r_excess`` is the largest ``|alpha_r| - alpha_r_lim - slack``
    over the race rows, where ``slack`` is the sideslip slack the MPC
    reported for the active command (zero for pure pursuit).
    """

    std_lat_accel: float
    mean_abs_ey: float
    avg_speed: float
    mean_abs_sideslip: float
    max_abs_alpha_r: float
    max_alpha_r_excess: float
    lap_times: tuple[float, ...]

    def as_dict(self) -> dict:
        return asdict(self)


def lateral_acceleration_std(a_lat) -> float:
    a = np.asarray(a_lat, dtype=float)
    if a.size == 0:
        raise MetricsError("no samples")
    return float(a.std())


def _col(T: np.ndarray, name: str) -> np.ndarray:
    return T[:, TRUTH_COLUMNS.index(name)]


def race_rows(log: EpisodeLog) -> np.ndarray:
    T = log.truth_array()
    return T[_col(T, "phase") == 1.0] if len(T) else T


def compute_metrics(log: EpisodeLog, on_belief: bool = False) -> Metrics:
    """Summarize the race phase of ``log``.

    Raises:
        MetricsError: the episode never reached the race phase.
    """
    T = race_rows(log)
    if len(T) == 0:
        raise MetricsError("episode has no race-phase samples")
    if on_belief:
        tel = [row for row in log.telemetry if row[1] == "race"]
        if not tel:
            raise MetricsError("episode has no race-phase telemetry")
        ey = np.array([row[TELEMETRY_COLUMNS.index("e_y")] for row in tel], dtype=float)
    else:
        ey = _col(T, "e_y_true")
    U, V, r = _col(T, "U"), _col(T, "V"), _col(T, "r")
    alpha_r = np.arctan((V - log.config.vehicle.l_r * r) / np.maximum(U, log.config.vehicle.U_min))
    excess = np.abs(alpha_r) - log.config.vehicle.alpha_r_lim - _col(T, "slack_sideslip")
    race_start = log.race_start()
    laps = tuple(lt for t_end, lt in zip(_lap_ends(log), log.lap_times()) if race_start is not None and t_end > race_start + 1e-9)
    return Metrics(
        std_lat_accel=lateral_acceleration_std(_col(T, "a_lat")),
        mean_abs_ey=float(np.abs(ey).mean()),
        avg_speed=float(U.mean()),
        mean_abs_sideslip=float(np.abs(np.arctan2(V, U)).mean()),
        max_abs_alpha_r=float(np.abs(alpha_r).max()),
        max_alpha_r_excess=float(excess.max()),
        lap_times=laps,
    )


def _lap_ends(log: EpisodeLog) -> list[float]:
    return [t for t, ev, _ in log.events if ev == "lap"]


def metrics_row(m: Metrics) -> dict[str, str]:
    """String fields for CSV output (lap times joined by spaces)."""
    row = {k: repr(float(getattr(m, k))) for k in METRIC_NAMES if k != "lap_times"}
    row["lap_times"] = " ".join(repr(float(v)) for v in m.lap_times)
    return row
