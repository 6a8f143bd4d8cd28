"""3-DOF bicycle model used as plant and as MPC prediction model.

State layout (index order is relied upon by the kernels and the MPC)::

    0 x, 1 y, 2 psi, 3 U, 4 V, 5 r, 6 delta_f, 7 a_x, 8 e_y, 9 e_psi

Tire forces use the linear region of a brush model with the sign convention
``F_y = -C * alpha``: a positive slip angle produces a restoring (negative)
lateral force, which makes yaw-rate feedback stabilizing.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields, replace

import numpy as np

from . import kernels
from .errors import DomainError

STATE_DIM = 10
INPUT_DIM = 2
IX, IY, IPSI, IU, IV, IR, IDELTA, IAX, IEY, IEPSI = range(STATE_DIM)
STATE_NAMES = ("x", "y", "psi", "U", "V", "r", "delta_f", "a_x", "e_y", "e_psi")


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return kernels.wrap_angle(float(a))


@dataclass(frozen=True)
class VehicleState:
    """Plant state; positions in the global frame, speeds in the body frame."""

    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0
    U: float = 1.0
    V: float = 0.0
    r: float = 0.0
    delta_f: float = 0.0
    a_x: float = 0.0
    e_y: float = 0.0
    e_psi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, arr) -> "VehicleState":
        return cls(*(float(v) for v in np.asarray(arr, dtype=float)[:STATE_DIM]))

    def with_(self, **kw) -> "VehicleState":
        return replace(self, **kw)


@dataclass(frozen=True)
class ControlRates:
    """MPC decision input: steering rate [rad/s] and longitudinal jerk [m/s^3]."""

    zeta_f: float = 0.0
    J_x: float = 0.0


@dataclass(frozen=True)
class VehicleParams:
    """Chassis, tire and actuator-limit parameters.

    Defaults are representative of a Formula Student car; none are published
    for the reference vehicle.
    """

    M: float = 300.0
    I_zz: float = 180.0
    l_f: float = 0.8
    l_r: float = 0.8
    C_f: float = 5.0e4
    C_r: float = 5.0e4
    delta_max: float = 0.4
    U_min: float = 0.5
    U_max: float = 6.0
    a_min: float = -4.0
    a_max: float = 2.0
    zeta_max: float = 1.0
    J_max: float = 6.0
    alpha_r_lim: float = 0.05

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "a_min":
                if not v < 0:
                    raise ValueError("a_min must be negative")
            elif not (v > 0 and math.isfinite(v)):
                raise ValueError(f"vehicle parameter {f.name} must be positive, got {v}")
        if self.U_max <= self.U_min:
            raise ValueError("U_max must exceed U_min")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r

    def kernel_vector(self) -> np.ndarray:
        return np.array([self.M, self.I_zz, self.l_f, self.l_r, self.C_f, self.C_r, self.U_min])


def _as_state_array(state) -> np.ndarray:
    if isinstance(state, VehicleState):
        return state.as_array()
    return np.asarray(state, dtype=float)


def slip_angles(state, params: VehicleParams) -> tuple[float, float]:
    """Front and rear slip angles.

    Raises:
        DomainError: if the longitudinal speed is below ``params.U_min``.
    """
    s = _as_state_array(state)
    U, V, r, delta = s[IU], s[IV], s[IR], s[IDELTA]
    if not U >= params.U_min:
        raise DomainError(f"slip angles undefined for U={U:.4g} < U_min={params.U_min}")
    alpha_f = math.atan((V + params.l_f * r) / U) - delta
    alpha_r = math.atan((V - params.l_r * r) / U)
    return alpha_f, alpha_r


def tire_forces(alpha_f: float, alpha_r: float, params: VehicleParams) -> tuple[float, float]:
    return -params.C_f * alpha_f, -params.C_r * alpha_r


def derivative(state, u1, kappa: float, params: VehicleParams) -> np.ndarray:
    """Time derivative of the 10-dim state.

    Below ``U_min`` the slip angles are evaluated at ``U_min`` (low-speed
    startup); a non-positive speed is rejected.
    """
    s = _as_state_array(state)
    if not s[IU] > 0.0:
        raise DomainError(f"derivative requires U > 0, got {s[IU]}")
    zeta, jerk = _rates(u1)
    return kernels.derivative(s, zeta, jerk, float(kappa), params.kernel_vector())


def _rates(u1) -> tuple[float, float]:
    if isinstance(u1, ControlRates):
        return float(u1.zeta_f), float(u1.J_x)
    return float(u1[0]), float(u1[1])


def step(state, u1, kappa: float, dt: float, params: VehicleParams):
    """Advance the state by ``dt`` with classical RK4.

    The interval is split into equal sub-steps when the lateral modes would
    make a single RK4 step unstable (see ``kernels.substeps``). Returns the
    same type as ``state`` (``VehicleState`` or array).
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must be in (0, 0.05], got {dt}")
    s = _as_state_array(state)
    if not s[IU] > 0.0:
        raise DomainError(f"step requires U > 0, got {s[IU]}")
    zeta, jerk = _rates(u1)
    out = kernels.rk4_step(s, zeta, jerk, float(kappa), float(dt), params.kernel_vector())
    if isinstance(state, VehicleState):
        return VehicleState.from_array(out)
    return out


def jacobians(state, u1, kappa: float, params: VehicleParams) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians of ``derivative`` w.r.t. state (10x10) and input (10x2)."""
    s = _as_state_array(state)
    psi, U, V, r, epsi = s[IPSI], s[IU], s[IV], s[IR], s[IEPSI]
    lf, lr, Cf, Cr, M, Izz = params.l_f, params.l_r, params.C_f, params.C_r, params.M, params.I_zz
    clamped = U < params.U_min
    Ue = params.U_min if clamped else U

    qf = (V + lf * r) / Ue
    qr = (V - lr * r) / Ue
    gf = 1.0 / (1.0 + qf * qf)
    gr = 1.0 / (1.0 + qr * qr)
    # d(alpha)/d(V, r, U, delta)
    daf = np.array([gf / Ue, gf * lf / Ue, 0.0 if clamped else -gf * qf / Ue, -1.0])
    dar = np.array([gr / Ue, -gr * lr / Ue, 0.0 if clamped else -gr * qr / Ue, 0.0])
    dFf = -Cf * daf
    dFr = -Cr * dar

    A = np.zeros((STATE_DIM, STATE_DIM))
    c, sn = math.cos(psi), math.sin(psi)
    A[IX, IPSI] = -U * sn - V * c
    A[IX, IU] = c
    A[IX, IV] = -sn
    A[IY, IPSI] = U * c - V * sn
    A[IY, IU] = sn
    A[IY, IV] = c
    A[IPSI, IR] = 1.0
    A[IU, IAX] = 1.0
    for col, k in ((IV, 0), (IR, 1), (IU, 2), (IDELTA, 3)):
        A[IV, col] = (dFf[k] + dFr[k]) / M
        A[IR, col] = (dFf[k] * lf - dFr[k] * lr) / Izz
    A[IV, IU] -= r
    A[IV, IR] -= U
    A[IEY, IU] = epsi
    A[IEY, IEPSI] = U
    A[IEY, IV] = 1.0
    A[IEPSI, IR] = 1.0
    A[IEPSI, IU] = -kappa

    B = np.zeros((STATE_DIM, INPUT_DIM))
    B[IDELTA, 0] = 1.0
    B[IAX, 1] = 1.0
    return A, B


def lateral_acceleration(state, params: VehicleParams) -> float:
    """Body-frame lateral acceleration ``V_dot + U r``."""
    d = derivative(state, (0.0, 0.0), 0.0, params)
    s = _as_state_array(state)
    return float(d[IV] + s[IU] * s[IR])


def sideslip(state) -> float:
    s = _as_state_array(state)
    return math.atan2(s[IV], s[IU])
