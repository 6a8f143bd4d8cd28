"""EKF localization over [x, y, theta, v_x, v_y, r].

Process model: position moves with the body velocity rotated into the world
frame, heading integrates the yaw rate, body velocity integrates the measured
acceleration plus the rotating-frame terms, and the yaw rate is a random walk.
The INS acceleration drives the prediction; every other sensor (and the INS
gyro) enters through a Joseph-form update.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import wrap_angle
from .errors import MeasurementOrderError
from .sensors import Measurement, SensorSchedule

log = logging.getLogger(__name__)

DIM = 6
IX, IY, ITH, IVX, IVY, IR = range(DIM)


@dataclass(frozen=True)
class Belief:
    mean: np.ndarray
    cov: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(DIM))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float).reshape(DIM, DIM))

    @property
    def pose(self) -> np.ndarray:
        return self.mean[[IX, IY, ITH]]


@dataclass(frozen=True)
class MeasurementModel:
    """``z = h(x) + v`` with Jacobian ``H`` and covariance ``R``.

    ``angle_rows`` lists measurement components whose residual is wrapped.
    """

    h: Callable[[np.ndarray], np.ndarray]
    H: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray
    angle_rows: tuple[int, ...] = ()


def linear_model(rows, R, angle_rows=()) -> MeasurementModel:
    sel = np.zeros((len(rows), DIM))
    for i, j in enumerate(rows):
        sel[i, j] = 1.0
    return MeasurementModel(
        h=lambda x, sel=sel: sel @ x,
        H=lambda x, sel=sel: sel,
        R=np.atleast_2d(np.asarray(R, dtype=float)),
        angle_rows=tuple(angle_rows),
    )


def default_models(schedule: SensorSchedule) -> dict[str, MeasurementModel]:
    """Measurement models matched to the sensor noise configuration."""
    return {
        "gnss_pos": linear_model([IX, IY], schedule.covariance("gnss_pos")),
        "wheel_speed": linear_model([IVX], schedule.covariance("wheel_speed")),
        "lidar_odom": linear_model([IX, IY, ITH], schedule.covariance("lidar_odom"), angle_rows=(2,)),
        "ins_gyro": linear_model([IR], [[schedule.ins_gyro_sigma**2]]),
    }


def default_process_noise() -> np.ndarray:
    """Continuous-time process noise density (per second)."""
    return np.diag([1e-4, 1e-4, 1e-5, 1e-3, 1e-3, 0.5])


def matched_process_noise(schedule: SensorSchedule, yaw_walk: float = 0.2, floor: float = 1e-6) -> np.ndarray:
    """Process noise density whose velocity terms equal the INS accelerometer noise.

    A held accelerometer sample with standard deviation sigma at rate f
    integrates to velocity noise of density sigma**2 / f. The pose states get
    a small ``floor`` and the yaw rate a ``yaw_walk`` random walk.
    """
    acc = schedule.ins_accel_sigma**2 / schedule.rates["ins"]
    return np.diag([floor, floor, 0.1 * floor, acc, acc, yaw_walk])


def process_rates(m: np.ndarray, a: np.ndarray) -> np.ndarray:
    _, _, th, vx, vy, r = m
    c, s = math.cos(th), math.sin(th)
    return np.array([vx * c - vy * s, vx * s + vy * c, r, a[0] + vy * r, a[1] - vx * r, 0.0])


def process_jacobian(m: np.ndarray) -> np.ndarray:
    _, _, th, vx, vy, r = m
    c, s = math.cos(th), math.sin(th)
    J = np.zeros((DIM, DIM))
    J[IX, ITH] = -vx * s - vy * c
    J[IX, IVX] = c
    J[IX, IVY] = -s
    J[IY, ITH] = vx * c - vy * s
    J[IY, IVX] = s
    J[IY, IVY] = c
    J[ITH, IR] = 1.0
    J[IVX, IVY] = r
    J[IVX, IR] = vy
    J[IVY, IVX] = -r
    J[IVY, IR] = -vx
    return J


def transition(m: np.ndarray, a, dt: float) -> np.ndarray:
    """One Heun (explicit trapezoid) step of the process model."""
    a = np.asarray(a, dtype=float)
    k1 = process_rates(m, a)
    k2 = process_rates(m + dt * k1, a)
    return m + 0.5 * dt * (k1 + k2)


def transition_jacobian(m: np.ndarray, a, dt: float) -> np.ndarray:
    """Exact Jacobian of ``transition`` with respect to the state."""
    a = np.asarray(a, dtype=float)
    J1 = process_jacobian(m)
    m2 = m + dt * process_rates(m, a)
    J2 = process_jacobian(m2)
    return np.eye(DIM) + 0.5 * dt * (J1 + J2 @ (np.eye(DIM) + dt * J1))


def predict(belief: Belief, imu, dt: float, Q: np.ndarray) -> Belief:
    """Propagate mean and covariance by ``dt`` with input acceleration ``imu[:2]``.

    ``Q`` is the discrete process noise added for this step.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    a = np.asarray(imu, dtype=float)[:2]
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(belief.mean)) and math.isfinite(dt)):
        raise FloatingPointError("non-finite input to predict")
    F = transition_jacobian(belief.mean, a, dt)
    mean = transition(belief.mean, a, dt)
    mean[ITH] = wrap_angle(mean[ITH])
    P = F @ belief.cov @ F.T + Q
    P = 0.5 * (P + P.T)
    return Belief(mean, P, belief.t + dt)


def update(belief: Belief, z, model: MeasurementModel) -> Belief:
    """Joseph-form correction. A singular innovation covariance leaves the
    belief unchanged (the rejection is logged)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    x = belief.mean
    H = np.atleast_2d(model.H(x))
    R = model.R
    if H.shape != (len(z), DIM) or R.shape != (len(z), len(z)):
        raise ValueError("measurement model dimensions do not match the measurement")
    P = belief.cov
    S = H @ P @ H.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e12:
        log.warning("rejecting update: innovation covariance is singular")
        return belief
    K = np.linalg.solve(S, H @ P).T
    y = z - model.h(x)
    for i in model.angle_rows:
        y[i] = wrap_angle(y[i])
    mean = x + K @ y
    mean[ITH] = wrap_angle(mean[ITH])
    IKH = np.eye(DIM) - K @ H
    Pn = IKH @ P @ IKH.T + K @ R @ K.T
    Pn = 0.5 * (Pn + Pn.T)
    return Belief(mean, Pn, belief.t)


@dataclass
class FusionState:
    """The held INS reading between predictions."""

    imu: np.ndarray = field(default_factory=lambda: np.zeros(3))


def fuse_step(
    belief: Belief,
    measurements: list[Measurement],
    models: dict[str, MeasurementModel],
    Q: np.ndarray,
    t_end: float | None = None,
    state: FusionState | None = None,
) -> Belief:
    """Apply a time-ordered batch of measurements.

    INS readings are held (zero-order) and drive the prediction between
    measurement times; the INS gyro is applied as a yaw-rate update. Kinds
    without a model (cone scans, camera) are ignored. ``Q`` is the
    continuous-time noise density. With ``t_end`` the belief is finally
    predicted to that time.

    Raises:
        MeasurementOrderError: timestamps decrease or precede the belief.
    """
    st = state if state is not None else FusionState()
    b = belief
    prev_t = belief.t
    for m in measurements:
        if m.t < prev_t - 1e-12:
            raise MeasurementOrderError(f"measurement at t={m.t} precedes t={prev_t}")
        prev_t = m.t
        if m.t > b.t:
            b = predict(b, st.imu[:2], m.t - b.t, Q * (m.t - b.t))
        if m.kind == "ins":
            st.imu = np.asarray(m.payload, dtype=float).copy()
            gyro = models.get("ins_gyro")
            if gyro is not None:
                b = update(b, m.payload[2:3], gyro)
        elif m.kind in models:
            b = update(b, m.payload, models[m.kind])
    if t_end is not None and t_end > b.t:
        b = predict(b, st.imu[:2], t_end - b.t, Q * (t_end - b.t))
    return b


class Localizer:
    """Sequential EKF owner for one episode."""

    def __init__(self, belief: Belief, schedule: SensorSchedule, Q: np.ndarray | None = None):
        self.belief = belief
        self.models = default_models(schedule)
        self.Q = default_process_noise() if Q is None else np.asarray(Q, dtype=float)
        self.state = FusionState()

    def step(self, measurements: list[Measurement], t_end: float | None = None) -> Belief:
        self.belief = fuse_step(self.belief, measurements, self.models, self.Q, t_end=t_end, state=self.state)
        return self.belief


def initial_belief(pose, speed: float, t: float = 0.0) -> Belief:
    mean = np.array([pose[0], pose[1], pose[2], speed, 0.0, 0.0])
    cov = np.diag([0.1**2, 0.1**2, 0.02**2, 0.1**2, 0.1**2, 0.05**2])
    return Belief(mean, cov, t)


def nees(belief: Belief, truth: np.ndarray) -> float:
    err = np.asarray(truth, dtype=float) - belief.mean
    err[ITH] = wrap_angle(err[ITH])
    return float(err @ np.linalg.solve(belief.cov, err))
