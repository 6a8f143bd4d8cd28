"""Pure-Python reference kernels.

These define the semantics of the hot loops; ``_ckernels.pyx`` must agree with
them to floating-point round-off. Parameter vectors are laid out as
``[M, I_zz, l_f, l_r, C_f, C_r, U_min]``.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi
STIFF_MARGIN = 2.0


def wrap_angle(a: float) -> float:
    r = math.fmod(a + math.pi, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    w = r - math.pi
    if w <= -math.pi:
        w = math.pi
    return w


def _deriv(s, zeta, jerk, kappa, p):
    x, y, psi, U, V, r, delta, ax, ey, epsi = s
    M, Izz, lf, lr, Cf, Cr, umin = p
    Ue = U if U > umin else umin
    alpha_f = math.atan((V + lf * r) / Ue) - delta
    alpha_r = math.atan((V - lr * r) / Ue)
    Fyf = -Cf * alpha_f
    Fyr = -Cr * alpha_r
    c = math.cos(psi)
    sn = math.sin(psi)
    return (
        U * c - V * sn,
        U * sn + V * c,
        r,
        ax,
        (Fyf + Fyr) / M - U * r,
        (Fyf * lf - Fyr * lr) / Izz,
        zeta,
        jerk,
        U * epsi + V,
        r - U * kappa,
    )


def derivative(state, zeta, jerk, kappa, params):
    return np.array(_deriv(tuple(float(v) for v in state), zeta, jerk, kappa, tuple(params)))


def substeps(U: float, dt: float, p) -> int:
    M, Izz, lf, lr, Cf, Cr, umin = p
    Ue = U if U > umin else umin
    lam = (Cf + Cr) / (M * Ue) + (Cf * lf * lf + Cr * lr * lr) / (Izz * Ue)
    return max(1, int(math.ceil(dt * lam / STIFF_MARGIN)))


def _rk4(s, zeta, jerk, kappa, dt, p):
    n = substeps(s[3], dt, p)
    h = dt / n
    for _ in range(n):
        k1 = _deriv(s, zeta, jerk, kappa, p)
        k2 = _deriv(tuple(a + 0.5 * h * b for a, b in zip(s, k1)), zeta, jerk, kappa, p)
        k3 = _deriv(tuple(a + 0.5 * h * b for a, b in zip(s, k2)), zeta, jerk, kappa, p)
        k4 = _deriv(tuple(a + h * b for a, b in zip(s, k3)), zeta, jerk, kappa, p)
        s = tuple(
            a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4)
        )
    s = list(s)
    s[2] = wrap_angle(s[2])
    s[9] = wrap_angle(s[9])
    return tuple(s)


def rk4_step(state, zeta, jerk, kappa, dt, params):
    s = _rk4(tuple(float(v) for v in state), zeta, jerk, kappa, dt, tuple(params))
    return np.array(s)


def rollout(state, inputs, kappas, dt, params):
    """Integrate the plant over a horizon; returns ``(N+1, 10)`` states."""
    p = tuple(params)
    n = len(kappas)
    out = np.empty((n + 1, 10))
    s = tuple(float(v) for v in state)
    out[0] = s
    for k in range(n):
        s = _rk4(s, float(inputs[k][0]), float(inputs[k][1]), float(kappas[k]), dt, p)
        out[k + 1] = s
    return out


def cluster_labels(points, eps):
    """Connected components of the ``dist <= eps`` graph.

    Labels are canonical: components are numbered in order of their
    lowest-index member.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    eps2 = eps * eps
    xs = pts[:, 0].tolist() if n else []
    ys = pts[:, 1].tolist() if n else []
    for i in range(n):
        xi = xs[i]
        yi = ys[i]
        for j in range(i + 1, n):
            dx = xs[j] - xi
            dy = ys[j] - yi
            if dx * dx + dy * dy <= eps2:
                ri = find(i)
                rj = find(j)
                if ri != rj:
                    if ri < rj:
                        parent[rj] = ri
                    else:
                        parent[ri] = rj
    labels = np.empty(n, dtype=np.int64)
    remap = {}
    for i in range(n):
        root = find(i)
        if root not in remap:
            remap[root] = len(remap)
        labels[i] = remap[root]
    return labels
