"""Geometric pure-pursuit baseline with proportional speed control.

The goal point is found on the path a lookahead distance ahead of the rear
axle's projection. Commands are a steering angle and an acceleration; a
first-order servo turns them into the steering-rate and jerk inputs the
plant expects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import dynamics as dyn
from ..dynamics import ControlRates, VehicleParams
from ..errors import OffTrackError
from ..track import ReferencePath


@dataclass(frozen=True)
class PurePursuitConfig:
    """Lookahead ``max(floor, max(lookahead, gain * U))``; servo time constant."""

    lookahead: float = 4.0
    gain: float = 0.5
    floor: float = 2.0
    speed_target: float = 3.0
    k_speed: float = 1.0
    servo_tau: float = 0.2

    def __post_init__(self):
        if not (self.lookahead > 0 and self.floor > 0 and self.servo_tau > 0):
            raise ValueError("lookahead, floor and servo_tau must be positive")
        if self.gain < 0 or self.k_speed < 0 or self.speed_target < 0:
            raise ValueError("gain, k_speed and speed_target must be nonnegative")

    def lookahead_at(self, U: float) -> float:
        return max(self.floor, self.lookahead, self.gain * U)


def _goal(path: ReferencePath, rx: float, ry: float, L_d: float):
    s, _, _, dist = path.project(rx, ry)
    if dist > 2.0 * L_d:
        raise OffTrackError(f"no path point within {2.0 * L_d:.2f} m of the rear axle")
    end = path.s[0] + path.length
    target = s + L_d
    if not path.closed:
        target = min(target, end)
    gx, gy = path.point_at(target)
    return float(gx), float(gy)


def pure_pursuit_step(state, path: ReferencePath, lookahead: float, speed_target: float, params: VehicleParams, k_speed: float = 1.0) -> tuple[float, float]:
    """Steering angle and acceleration commands.

    ``delta = atan(2 L sin(eta) / d)`` where ``eta`` is the bearing of the
    goal from the rear axle and ``d`` its distance (nominally the
    lookahead), which is exact for a circular arc through the goal.

    Raises:
        ValueError: non-positive lookahead.
        OffTrackError: the path is more than twice the lookahead away.
    """
    if not lookahead > 0:
        raise ValueError("lookahead must be positive")
    s = state.as_array() if isinstance(state, dyn.VehicleState) else np.asarray(state, dtype=float)
    x, y, psi, U = s[dyn.IX], s[dyn.IY], s[dyn.IPSI], s[dyn.IU]
    c, sn = math.cos(psi), math.sin(psi)
    rx, ry = x - params.l_r * c, y - params.l_r * sn
    gx, gy = _goal(path, rx, ry, lookahead)
    dx, dy = gx - rx, gy - ry
    d = math.hypot(dx, dy)
    if d < 1e-9:
        delta = 0.0
    else:
        eta = math.atan2(-sn * dx + c * dy, c * dx + sn * dy)
        delta = math.atan(2.0 * params.wheelbase * math.sin(eta) / d)
    delta = min(max(delta, -params.delta_max), params.delta_max)
    a = min(max(k_speed * (speed_target - U), params.a_min), params.a_max)
    return delta, a


def servo(state, delta_cmd: float, a_cmd: float, params: VehicleParams, tau: float) -> ControlRates:
    """First-order actuator tracking within the rate limits."""
    s = state.as_array() if isinstance(state, dyn.VehicleState) else np.asarray(state, dtype=float)
    zeta = (delta_cmd - s[dyn.IDELTA]) / tau
    jerk = (a_cmd - s[dyn.IAX]) / tau
    return ControlRates(
        min(max(zeta, -params.zeta_max), params.zeta_max),
        min(max(jerk, -params.J_max), params.J_max),
    )


class PurePursuitController:
    def __init__(self, params: VehicleParams | None = None, config: PurePursuitConfig | None = None):
        self.params = params or VehicleParams()
        self.config = config or PurePursuitConfig()
        self.last_command = (0.0, 0.0)

    def reset(self) -> None:
        self.last_command = (0.0, 0.0)

    def step(self, state, path: ReferencePath, speed_target: float | None = None) -> ControlRates:
        cfg = self.config
        s = state.as_array() if isinstance(state, dyn.VehicleState) else np.asarray(state, dtype=float)
        target = cfg.speed_target if speed_target is None else speed_target
        L_d = cfg.lookahead_at(s[dyn.IU])
        delta, a = pure_pursuit_step(s, path, L_d, target, self.params, cfg.k_speed)
        self.last_command = (delta, a)
        return servo(s, delta, a, self.params, cfg.servo_tau)
