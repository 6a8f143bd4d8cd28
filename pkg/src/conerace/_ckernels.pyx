# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; semantics mirror ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport atan, cos, sin, ceil, fmod, M_PI

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI
cdef double STIFF_MARGIN = 2.0


cdef inline double _wrap(double a) noexcept nogil:
    cdef double r = fmod(a + M_PI, TWO_PI)
    if r < 0.0:
        r += TWO_PI
    cdef double w = r - M_PI
    if w <= -M_PI:
        w = M_PI
    return w


cpdef double wrap_angle(double a):
    return _wrap(a)


cdef inline void _deriv(const double* s, double zeta, double jerk, double kappa,
                        const double* p, double* out) noexcept nogil:
    cdef double U = s[3]
    cdef double V = s[4]
    cdef double r = s[5]
    cdef double Ue = U if U > p[6] else p[6]
    cdef double alpha_f = atan((V + p[2] * r) / Ue) - s[6]
    cdef double alpha_r = atan((V - p[3] * r) / Ue)
    cdef double Fyf = -p[4] * alpha_f
    cdef double Fyr = -p[5] * alpha_r
    cdef double c = cos(s[2])
    cdef double sn = sin(s[2])
    out[0] = U * c - V * sn
    out[1] = U * sn + V * c
    out[2] = r
    out[3] = s[7]
    out[4] = (Fyf + Fyr) / p[0] - U * r
    out[5] = (Fyf * p[2] - Fyr * p[3]) / p[1]
    out[6] = zeta
    out[7] = jerk
    out[8] = U * s[9] + V
    out[9] = r - U * kappa


cdef inline int _substeps(double U, double dt, const double* p) noexcept nogil:
    cdef double Ue = U if U > p[6] else p[6]
    cdef double lam = (p[4] + p[5]) / (p[0] * Ue) + (p[4] * p[2] * p[2] + p[5] * p[3] * p[3]) / (p[1] * Ue)
    cdef int n = <int> ceil(dt * lam / STIFF_MARGIN)
    return n if n > 1 else 1


cdef void _rk4(double* s, double zeta, double jerk, double kappa, double dt,
               const double* p) noexcept nogil:
    cdef double k1[10]
    cdef double k2[10]
    cdef double k3[10]
    cdef double k4[10]
    cdef double tmp[10]
    cdef int n = _substeps(s[3], dt, p)
    cdef double h = dt / n
    cdef int it, i
    for it in range(n):
        _deriv(s, zeta, jerk, kappa, p, k1)
        for i in range(10):
            tmp[i] = s[i] + 0.5 * h * k1[i]
        _deriv(tmp, zeta, jerk, kappa, p, k2)
        for i in range(10):
            tmp[i] = s[i] + 0.5 * h * k2[i]
        _deriv(tmp, zeta, jerk, kappa, p, k3)
        for i in range(10):
            tmp[i] = s[i] + h * k3[i]
        _deriv(tmp, zeta, jerk, kappa, p, k4)
        for i in range(10):
            s[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    s[2] = _wrap(s[2])
    s[9] = _wrap(s[9])


def derivative(state, double zeta, double jerk, double kappa, params):
    cdef double[::1] s = np.ascontiguousarray(state, dtype=np.float64)
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    out = np.empty(10)
    cdef double[::1] o = out
    _deriv(&s[0], zeta, jerk, kappa, &p[0], &o[0])
    return out


def substeps(double U, double dt, params):
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    return _substeps(U, dt, &p[0])


def rk4_step(state, double zeta, double jerk, double kappa, double dt, params):
    out = np.array(state, dtype=np.float64, copy=True)
    cdef double[::1] s = out
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    _rk4(&s[0], zeta, jerk, kappa, dt, &p[0])
    return out


def rollout(state, inputs, kappas, double dt, params):
    cdef double[:, ::1] u = np.ascontiguousarray(inputs, dtype=np.float64).reshape(-1, 2)
    cdef double[::1] kap = np.ascontiguousarray(kappas, dtype=np.float64)
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef Py_ssize_t n = kap.shape[0]
    out = np.empty((n + 1, 10))
    cdef double[:, ::1] o = out
    cdef double s[10]
    cdef Py_ssize_t k, i
    cdef double[::1] s0 = np.ascontiguousarray(state, dtype=np.float64)
    for i in range(10):
        s[i] = s0[i]
        o[0, i] = s[i]
    for k in range(n):
        _rk4(s, u[k, 0], u[k, 1], kap[k], dt, &p[0])
        for i in range(10):
            o[k + 1, i] = s[i]
    return out


cdef Py_ssize_t _find(Py_ssize_t* parent, Py_ssize_t i) noexcept nogil:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def cluster_labels(points, double eps):
    pts_arr = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    cdef double[:, ::1] pts = pts_arr
    cdef Py_ssize_t n = pts.shape[0]
    parent_arr = np.arange(n, dtype=np.intp)
    cdef Py_ssize_t[::1] parent = parent_arr
    labels = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] lab = labels
    remap_arr = np.full(n, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] remap = remap_arr
    cdef double eps2 = eps * eps
    cdef double dx, dy
    cdef Py_ssize_t i, j, ri, rj, nxt = 0
    if n == 0:
        return labels
    for i in range(n):
        for j in range(i + 1, n):
            dx = pts[j, 0] - pts[i, 0]
            dy = pts[j, 1] - pts[i, 1]
            if dx * dx + dy * dy <= eps2:
                ri = _find(&parent[0], i)
                rj = _find(&parent[0], j)
                if ri != rj:
                    if ri < rj:
                        parent[rj] = ri
                    else:
                        parent[ri] = rj
    for i in range(n):
        ri = _find(&parent[0], i)
        if remap[ri] < 0:
            remap[ri] = nxt
            nxt += 1
        lab[i] = remap[ri]
    return labels
