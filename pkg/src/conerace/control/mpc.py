"""Receding-horizon path-following MPC.

Each control step runs one SQP iteration: the plant model is rolled out
along a nominal input sequence (the previous solution shifted by one step),
linearized about that rollout, discretized with the exact zero-order-hold
matrix exponential and condensed into a dense QP over input corrections and
two nonnegative slacks per step (sideslip and corridor).

Decision vector ``z = [du_0 .. du_{N-1}, S_sh_1 .. S_sh_N, S_env_1 .. S_env_N]``.
Inequality rows per step k = 1..N, in order: sideslip (+, -), corridor
(upper, lower), steering angle, speed, acceleration, steering rate, jerk
(each upper then lower). Slack nonnegativity is kept separate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .. import dynamics as dyn
from .. import kernels
from ..dynamics import ControlRates, VehicleParams
from ..errors import InfeasibleCorridorError, LinearizationError
from ..track import ReferencePath, path_frame
from . import qp

ROWS_PER_STEP = 14


@dataclass(frozen=True)
class MpcConfig:
    """Horizon, weights and limits.

    ``speed_cap`` defaults to ``U_max - 0.5``; ``a_lat_max`` defaults to
    ``0.8 * alpha_r_lim * 2 C_r / M``. ``W_speed`` and the input
    regularization weights are additions to the path-following cost: the
    former sets the pace, the latter keep the QP strictly convex.
    """

    N: int = 20
    dt: float = 0.1
    W_u: float = 5.0
    W_epsi: float = 10.0
    W_ey: float = 20.0
    W_sh: float = 1.0e3
    W_speed: float = 1.0
    reg_zeta: float = 1e-3
    reg_jerk: float = 1e-2
    d_s: float = 0.3
    speed_cap: float | None = None
    a_lat_max: float | None = None
    max_iter: int = 500

    def __post_init__(self):
        if self.N < 5:
            raise ValueError("horizon N must be at least 5")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("W_u", "W_epsi", "W_ey", "W_sh", "W_speed", "reg_zeta", "reg_jerk", "d_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def cap(self, params: VehicleParams) -> float:
        return params.U_max - 0.5 if self.speed_cap is None else min(self.speed_cap, params.U_max)

    def lateral_limit(self, params: VehicleParams) -> float:
        if self.a_lat_max is not None:
            return self.a_lat_max
        return 0.8 * params.alpha_r_lim * params.C_r * 2.0 / params.M


@dataclass(frozen=True)
class OcpProblem:
    """Condensed QP ``min 0.5 z'Hz + g'z  s.t.  A z <= b, slacks >= 0``."""

    H: np.ndarray
    g: np.ndarray
    A: np.ndarray
    b: np.ndarray
    N: int
    nominal_states: np.ndarray
    nominal_inputs: np.ndarray
    prediction: np.ndarray
    kappa: np.ndarray
    s: np.ndarray
    U_ref: np.ndarray
    const: float = 0.0

    @property
    def n_inputs(self) -> int:
        return 2 * self.N

    @property
    def n_slacks(self) -> int:
        return 2 * self.N

    def solver_constraints(self) -> tuple[np.ndarray, np.ndarray]:
        """``A``/``b`` with the slack bounds appended as ``-S <= 0`` rows."""
        n = self.n_inputs + self.n_slacks
        bounds = np.zeros((self.n_slacks, n))
        bounds[:, self.n_inputs :] = -np.eye(self.n_slacks)
        return np.vstack([self.A, bounds]), np.concatenate([self.b, np.zeros(self.n_slacks)])

    def states(self, z: np.ndarray) -> np.ndarray:
        du = z[: self.n_inputs]
        return self.nominal_states + (self.prediction @ du).reshape(self.N + 1, dyn.STATE_DIM)


@dataclass(frozen=True)
class OcpSolution:
    inputs: np.ndarray
    states: np.ndarray
    slack_sideslip: np.ndarray
    slack_env: np.ndarray
    status: str
    iterations: int
    objective: float = 0.0
    active: tuple[int, ...] = field(default=(), repr=False)

    @property
    def first(self) -> ControlRates:
        return ControlRates(float(self.inputs[0, 0]), float(self.inputs[0, 1]))


def discretize(A: np.ndarray, B: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization."""
    n, m = B.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = expm(aug * dt)
    return E[:n, :n], E[:n, n:]


def nominal_rollout(state, inputs, kappas, dt: float, params: VehicleParams) -> np.ndarray:
    """States (N+1, 10) from applying ``inputs`` (N, 2) with the plant integrator."""
    return kernels.rollout(np.asarray(state, dtype=float), np.asarray(inputs, dtype=float), np.asarray(kappas, dtype=float), float(dt), params.kernel_vector())


def linearize(nominal_states, nominal_inputs, kappas, dt: float, params: VehicleParams):
    """Discrete LTV matrices ``(A_k, B_k)`` about a nominal trajectory.

    ``x_{k+1} - xbar_{k+1} = A_k (x_k - xbar_k) + B_k (u_k - ubar_k)``.

    Raises:
        LinearizationError: the nominal speed drops below ``U_min``.
    """
    X = np.asarray(nominal_states, dtype=float)
    Ubar = np.asarray(nominal_inputs, dtype=float).reshape(-1, 2)
    N = len(Ubar)
    if np.any(X[:N, dyn.IU] < params.U_min):
        raise LinearizationError(f"nominal speed below U_min={params.U_min}")
    Ad = np.empty((N, dyn.STATE_DIM, dyn.STATE_DIM))
    Bd = np.empty((N, dyn.STATE_DIM, dyn.INPUT_DIM))
    for k in range(N):
        Ac, Bc = dyn.jacobians(X[k], Ubar[k], float(kappas[k]), params)
        Ad[k], Bd[k] = discretize(Ac, Bc, dt)
    return Ad, Bd


def condense(Ad: np.ndarray, Bd: np.ndarray) -> np.ndarray:
    """Prediction matrix mapping stacked input corrections to stacked states.

    Row block k (k = 0..N) is ``d x_k / d du``; block 0 is zero.
    """
    N = len(Ad)
    n, m = Bd.shape[1:]
    G = np.zeros(((N + 1) * n, N * m))
    blk = np.zeros((n, N * m))
    for k in range(N):
        blk = Ad[k] @ blk
        blk[:, k * m : (k + 1) * m] += Bd[k]
        G[(k + 1) * n : (k + 2) * n] = blk
    return G


def _preview(path: ReferencePath, s0: float, X: np.ndarray, dt: float):
    """Arc length and curvature at each step of a nominal trajectory."""
    N = len(X) - 1
    s = np.empty(N + 1)
    s[0] = s0
    for k in range(N):
        s[k + 1] = s[k] + dt * max(X[k, dyn.IU], 0.0)
    if not path.closed:
        s = np.clip(s, path.s[0], path.s[0] + path.length)
    return s, np.asarray(path.curvature_at(s), dtype=float)


def reference_speed(kappa, config: MpcConfig, params: VehicleParams) -> np.ndarray:
    k = np.maximum(np.abs(np.asarray(kappa, dtype=float)), 1e-9)
    return np.minimum(config.cap(params), np.sqrt(config.lateral_limit(params) / k))


def build_ocp(state, path: ReferencePath, config: MpcConfig, params: VehicleParams, nominal_inputs=None, s0: float | None = None) -> OcpProblem:
    """Assemble the condensed QP about a nominal rollout.

    ``state`` is the 10-dim model state with ``e_y``/``e_psi`` already
    expressed relative to ``path`` at arc length ``s0`` (computed from the
    pose if omitted).

    Raises:
        InfeasibleCorridorError: comfort distance leaves an empty corridor.
        LinearizationError: see ``linearize``.
    """
    x0 = np.array(state.as_array() if isinstance(state, dyn.VehicleState) else state, dtype=float)
    N, dt = config.N, config.dt
    if s0 is None:
        ey, epsi, s0 = path_frame(path, x0[[dyn.IX, dyn.IY, dyn.IPSI]])
        x0[dyn.IEY], x0[dyn.IEPSI] = ey, epsi
    Ubar = np.zeros((N, 2)) if nominal_inputs is None else np.asarray(nominal_inputs, dtype=float).reshape(N, 2)

    # two passes: curvature along the nominal depends on the nominal speed
    s, kappa = _preview(path, s0, np.repeat(x0[None, :], N + 1, axis=0), dt)
    X = nominal_rollout(x0, Ubar, kappa[:N], dt, params)
    s, kappa = _preview(path, s0, X, dt)
    X = nominal_rollout(x0, Ubar, kappa[:N], dt, params)

    lo, hi = path.corridor_at(s)
    lo, hi = np.asarray(lo)[1:], np.asarray(hi)[1:]
    if np.any(hi - config.d_s < lo + config.d_s):
        raise InfeasibleCorridorError(f"comfort distance {config.d_s} leaves an empty corridor")

    Ad, Bd = linearize(X, Ubar, kappa[:N], dt, params)
    G = condense(Ad, Bd)
    nx = dyn.STATE_DIM
    nu = 2 * N
    nz = 4 * N

    def rows(idx):
        """Affine map z -> x_k[idx] for k = 1..N as (N, nz) and offsets."""
        M = np.zeros((N, nz))
        M[:, :nu] = G[nx + idx :: nx][:N]
        return M, X[1:, idx].copy()

    Mey, cey = rows(dyn.IEY)
    Mep, cep = rows(dyn.IEPSI)
    Mu, cu = rows(dyn.IU)
    Md, cd = rows(dyn.IDELTA)
    Ma, ca = rows(dyn.IAX)
    Mv, cv = rows(dyn.IV)
    Mr, cr = rows(dyn.IR)

    U_ref = reference_speed(kappa[1:], config, params)
    # least-squares terms: sum w * (M z + c - target)^2
    terms = []
    terms.append((Mey, cey, np.full(N, config.W_ey)))
    terms.append((Mep, cep, np.full(N, config.W_epsi)))
    terms.append((Mu, cu - U_ref, np.full(N, config.W_speed)))
    Dd = Md.copy()
    cdd = cd.copy()
    Dd[1:] -= Md[:-1]
    cdd[1:] -= cd[:-1]
    cdd[0] -= x0[dyn.IDELTA]
    terms.append((Dd, cdd, np.full(N, config.W_u)))
    Iu = np.zeros((nu, nz))
    Iu[:, :nu] = np.eye(nu)
    terms.append((Iu, Ubar.reshape(-1), np.tile([config.reg_zeta, config.reg_jerk], N)))
    Is = np.zeros((2 * N, nz))
    Is[:, nu:] = np.eye(2 * N)
    terms.append((Is, np.zeros(2 * N), np.full(2 * N, config.W_sh)))

    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    const = 0.0
    for M, c, w in terms:
        Mw = M * w[:, None]
        H += 2.0 * M.T @ Mw
        g += 2.0 * Mw.T @ c
        const += float(c @ (w * c))

    # inequality rows
    A = np.zeros((ROWS_PER_STEP * N, nz))
    b = np.zeros(ROWS_PER_STEP * N)
    lr = params.l_r
    slip = Mv - lr * Mr
    cslip = cv - lr * cr
    slip_cap = params.alpha_r_lim * X[1:, dyn.IU]
    for k in range(N):
        r0 = ROWS_PER_STEP * k
        e_sh = np.zeros(nz)
        e_sh[nu + k] = 1.0
        e_env = np.zeros(nz)
        e_env[nu + N + k] = 1.0
        e_z = np.zeros(nz)
        e_z[2 * k] = 1.0
        e_j = np.zeros(nz)
        e_j[2 * k + 1] = 1.0
        blocks = [
            (slip[k] - e_sh, slip_cap[k] - cslip[k]),
            (-slip[k] - e_sh, slip_cap[k] + cslip[k]),
            (Mey[k] - e_env, hi[k] - config.d_s - cey[k]),
            (-Mey[k] - e_env, -(lo[k] + config.d_s) + cey[k]),
            (Md[k], params.delta_max - cd[k]),
            (-Md[k], params.delta_max + cd[k]),
            (Mu[k], params.U_max - cu[k]),
            (-Mu[k], -params.U_min + cu[k]),
            (Ma[k], params.a_max - ca[k]),
            (-Ma[k], -params.a_min + ca[k]),
            (e_z, params.zeta_max - Ubar[k, 0]),
            (-e_z, params.zeta_max + Ubar[k, 0]),
            (e_j, params.J_max - Ubar[k, 1]),
            (-e_j, params.J_max + Ubar[k, 1]),
        ]
        for i, (row, rhs) in enumerate(blocks):
            A[r0 + i] = row
            b[r0 + i] = rhs
    return OcpProblem(
        H=0.5 * (H + H.T),
        g=g,
        A=A,
        b=b,
        N=N,
        nominal_states=X,
        nominal_inputs=Ubar,
        prediction=G,
        kappa=kappa,
        s=s,
        U_ref=U_ref,
        const=const,
    )


def solve_ocp(problem: OcpProblem, warm_active=None, max_iter: int = 500) -> OcpSolution:
    A, b = problem.solver_constraints()
    res = qp.solve_qp(problem.H, problem.g, A, b, warm_active=warm_active, max_iter=max_iter)
    z = res.z
    N = problem.N
    inputs = problem.nominal_inputs + z[: 2 * N].reshape(N, 2)
    slacks = np.maximum(z[2 * N :], 0.0)
    return OcpSolution(
        inputs=inputs,
        states=problem.states(z),
        slack_sideslip=slacks[:N],
        slack_env=slacks[N:],
        status=res.status,
        iterations=res.iterations,
        objective=res.objective + problem.const,
        active=res.active,
    )


def shift_active(active, N: int) -> list[int]:
    """Map a working set one step forward in time (dropping step 1)."""
    out = []
    n_rows = ROWS_PER_STEP * N
    for i in active:
        if i < n_rows:
            if i >= ROWS_PER_STEP:
                out.append(i - ROWS_PER_STEP)
        else:
            j = i - n_rows
            block, k = divmod(j, N)
            if k >= 1:
                out.append(n_rows + block * N + k - 1)
    return out


def safe_stop(state, params: VehicleParams) -> ControlRates:
    """Zero steering rate and the strongest braking the jerk limit allows."""
    a = float(np.asarray(state)[dyn.IAX]) if not isinstance(state, dyn.VehicleState) else state.a_x
    return ControlRates(0.0, -params.J_max if a > params.a_min else 0.0)


def mpc_step(state, path: ReferencePath, config: MpcConfig, params: VehicleParams, prev_solution: OcpSolution | None = None, belief_age: float = 0.0, s0: float | None = None):
    """One receding-horizon step.

    Returns:
        ``(ControlRates, OcpSolution)``. An infeasible QP yields the
        safe-stop command with the solution status ``infeasible``.

    Raises:
        ValueError: the localization belief is older than ``2 dt``.
    """
    if belief_age >= 2.0 * config.dt:
        raise ValueError(f"belief age {belief_age:.3f} s is stale for dt={config.dt}")
    N = config.N
    nominal = None
    warm = None
    if prev_solution is not None and prev_solution.inputs.shape == (N, 2) and prev_solution.status != qp.INFEASIBLE:
        nominal = np.vstack([prev_solution.inputs[1:], prev_solution.inputs[-1:]])
        warm = shift_active(prev_solution.active, N)
    try:
        problem = build_ocp(state, path, config, params, nominal_inputs=nominal, s0=s0)
    except LinearizationError:
        if nominal is None:
            raise
        problem = build_ocp(state, path, config, params, nominal_inputs=None, s0=s0)
        warm = None
    sol = solve_ocp(problem, warm_active=warm, max_iter=config.max_iter)
    if sol.status == qp.INFEASIBLE:
        return safe_stop(state, params), sol
    return sol.first, sol


class MpcController:
    """Holds the previous solution for shifting and warm starts."""

    def __init__(self, params: VehicleParams | None = None, config: MpcConfig | None = None):
        self.params = params or VehicleParams()
        self.config = config or MpcConfig()
        self.prev: OcpSolution | None = None

    def reset(self) -> None:
        self.prev = None

    def step(self, state, path: ReferencePath, belief_age: float = 0.0, s0: float | None = None):
        cmd, sol = mpc_step(state, path, self.config, self.params, self.prev, belief_age, s0)
        self.prev = None if sol.status == qp.INFEASIBLE else sol
        return cmd, sol

