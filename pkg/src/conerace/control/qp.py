"""Dense convex QP: minimize 0.5 z'Hz + g'z subject to A z <= b.

Goldfarb-Idnani dual active-set method. The working-set factorization is
``J = L^-T Q``, ``R`` from a QR of ``L^-1 N`` (``H = L L'``, ``N`` the active
constraint normals), recomputed whenever the working set changes. The
iterate is always the minimizer over the current working set with
nonnegative multipliers, so the method can be warm-started from any
linearly independent set of constraints after dropping those with negative
multipliers.

Positive semidefinite Hessians are handled by proximal-point iterations on
``H + rho I``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
INFEASIBLE = "infeasible"

FEAS_TOL = 1e-9
INDEP_TOL = 1e-10


@dataclass(frozen=True)
class QpResult:
    z: np.ndarray
    multipliers: np.ndarray
    active: tuple[int, ...]
    status: str
    iterations: int
    objective: float


def objective(H, g, z) -> float:
    return float(0.5 * z @ H @ z + g @ z)


def kkt_residual(H, g, A, b, z, lam) -> float:
    """Max of stationarity, primal, dual and complementarity violations."""
    H, g, A, b = (np.asarray(v, dtype=float) for v in (H, g, A, b))
    A = A.reshape(-1, len(g))
    stat = H @ z + g + A.T @ lam
    slack = b - A @ z
    parts = [np.abs(stat).max(initial=0.0), (-slack).max(initial=0.0), (-lam).max(initial=0.0)]
    parts.append(np.abs(lam * slack).max(initial=0.0))
    return float(max(parts))


class _Factor:
    """Factorization of the working set for a PD Hessian with Cholesky ``L``."""

    def __init__(self, L: np.ndarray, A: np.ndarray):
        self.L = L
        self.A = A
        self.n = L.shape[0]
        self.Linv = solve_triangular(L, np.eye(self.n), lower=True)
        self.set([])

    def set(self, active: list[int]) -> bool:
        """Factor the working set; False if the normals are dependent."""
        self.active = list(active)
        q = len(active)
        if q == 0:
            self.J = self.Linv.T.copy()
            self.R = np.zeros((0, 0))
            return True
        # GI works with constraints n'z >= c where n = -A_i
        B = self.Linv @ (-self.A[active].T)
        Q, R = np.linalg.qr(B, mode="complete")
        R = R[:q]
        if np.any(np.abs(np.diag(R)) <= INDEP_TOL * max(1.0, np.abs(R).max())):
            return False
        self.J = self.Linv.T @ Q
        self.R = R
        return True

    def directions(self, i: int):
        """Primal step ``z`` and dual step ``r`` for adding constraint ``i``."""
        q = len(self.active)
        d = self.J.T @ (-self.A[i])
        z = self.J[:, q:] @ d[q:]
        r = solve_triangular(self.R, d[:q]) if q else np.zeros(0)
        return z, r


def _eqp(H_chol, H, g, A, b, active):
    """Minimizer with ``active`` rows held at equality, and its multipliers."""
    n = len(g)
    q = len(active)
    if q == 0:
        z = -np.linalg.solve(H, g) if H_chol is None else -_chol_solve(H_chol, g)
        return z, np.zeros(0)
    Aw = A[active]
    K = np.block([[H, Aw.T], [Aw, np.zeros((q, q))]])
    sol = np.linalg.solve(K, np.concatenate([-g, b[active]]))
    return sol[:n], sol[n:]


def _chol_solve(L, v):
    return solve_triangular(L, solve_triangular(L, v, lower=True), lower=True, trans="T")


def _solve_pd(H, g, A, b, L, warm_active, max_iter):
    m = A.shape[0]
    fac = _Factor(L, A)
    iters = 0
    active: list[int] = []
    if warm_active:
        cand = [i for i in dict.fromkeys(warm_active) if 0 <= i < m]
        while cand and not fac.set(cand):
            cand = cand[:-1]
        while cand:
            z, lam = _eqp(L, H, g, A, b, cand)
            if lam.min() >= 0.0:
                break
            iters += 1
            cand.pop(int(np.argmin(lam)))
            fac.set(cand)
        active = cand
    if active:
        z, u = _eqp(L, H, g, A, b, active)
        u = np.maximum(u, 0.0)
        fac.set(active)
    else:
        z = -_chol_solve(L, g)
        u = np.zeros(0)
        fac.set([])

    scale = np.maximum(1.0, np.abs(b))
    while True:
        viol = (A @ z - b) / scale
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol)) if m else -1
        if m == 0 or viol[p] <= FEAS_TOL:
            return z, active, u, OPTIMAL, iters
        u_plus = np.append(u, 0.0)
        while True:
            if iters >= max_iter:
                return z, active, u, MAX_ITER, iters
            iters += 1
            zstep, r = fac.directions(p)
            npz = -A[p] @ zstep
            s_p = b[p] - A[p] @ z
            t2 = np.inf if np.linalg.norm(zstep) <= 1e-14 * (1 + np.linalg.norm(z)) or npz <= 0 else -s_p / npz
            t1, k = np.inf, -1
            for j, rj in enumerate(r):
                if rj > 1e-14:
                    ratio = u_plus[j] / rj
                    if ratio < t1:
                        t1, k = ratio, j
            t = min(t1, t2)
            if not np.isfinite(t):
                return z, active, u, INFEASIBLE, iters
            if not np.isfinite(t2):
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                u_plus = np.delete(u_plus, k)
                active.pop(k)
                fac.set(active)
                continue
            z = z + t * zstep
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t == t2:
                active.append(p)
                if not fac.set(active):
                    active.pop()
                    fac.set(active)
                    return z, active, u_plus[:-1], INFEASIBLE, iters
                u = u_plus
                break
            u_plus = np.delete(u_plus, k)
            active.pop(k)
            fac.set(active)


def solve_qp(H, g, A=None, b=None, warm_active=None, max_iter: int = 500, prox_rho: float | None = None) -> QpResult:
    """Solve the QP; deterministic for identical inputs.

    Args:
        H: symmetric positive semidefinite Hessian (n, n).
        g: linear term (n,).
        A, b: inequality constraints ``A z <= b``.
        warm_active: constraint indices to start from (e.g. the previous
            solution's active set).
        max_iter: budget of active-set changes (the reported iteration
            count; factoring a warm-start set is not an iteration).
        prox_rho: proximal weight used if ``H`` is singular (default scales
            with ``H``).
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float).reshape(-1)
    n = len(g)
    H = 0.5 * (H + H.T)
    if A is None:
        A = np.zeros((0, n))
        b = np.zeros(0)
    A = np.asarray(A, dtype=float).reshape(-1, n)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.shape[0] != len(b):
        raise ValueError("A and b have inconsistent row counts")
    warm = list(warm_active) if warm_active is not None else []
    try:
        L = np.linalg.cholesky(H)
        if np.min(np.abs(np.diag(L))) < 1e-7 * np.sqrt(max(1.0, np.abs(np.diag(H)).max())):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        return _solve_proximal(H, g, A, b, warm, max_iter, prox_rho)
    z, active, u, status, iters = _solve_pd(H, g, A, b, L, warm, max_iter)
    lam = np.zeros(len(b))
    if active:
        lam[active] = u
    return QpResult(z, lam, tuple(active), status, iters, objective(H, g, z))


def _solve_proximal(H, g, A, b, warm, max_iter, rho):
    n = len(g)
    if rho is None:
        rho = 1e-6 * max(1.0, np.abs(H).max())
    Hr = H + rho * np.eye(n)
    L = np.linalg.cholesky(Hr)
    z = np.zeros(n)
    active = list(warm)
    total = 0
    status = OPTIMAL
    u = np.zeros(0)
    f_prev = np.inf
    for _ in range(200):
        z_new, active, u, status, iters = _solve_pd(Hr, g - rho * z, A, b, L, active, max_iter)
        total += iters
        if status != OPTIMAL:
            z = z_new
            break
        z = z_new
        f = objective(H, g, z)
        if f_prev - f <= 1e-13 * (1.0 + abs(f)):
            break
        f_prev = f
    else:
        status = MAX_ITER
    lam = np.zeros(len(b))
    if active:
        lam[active] = u
    return QpResult(z, lam, tuple(active), status, total, objective(H, g, z))
