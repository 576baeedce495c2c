# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled PMSM closed-loop integrator.

Same contract as ``twoscale._kernel_py.pmsm_run``; see that module for the
parameter layout and status codes.
"""

import numpy as np

from libc.math cimport fabs, sqrt, isfinite

cdef int OK = 0
cdef int NONPHYSICAL = 1
cdef int NONFINITE = 2
cdef int SINGULAR = 3

cdef double PIVOT_RTOL = 1e-12


cdef int _solve4(double a[4][4], double b[4][2], double x[4][2]) noexcept nogil:
    cdef int i, j, k, p, c
    cdef double scale = 0.0, f, piv, acc, tmp
    for i in range(4):
        for j in range(4):
            if fabs(a[i][j]) > scale:
                scale = fabs(a[i][j])
    for k in range(4):
        p = k
        for i in range(k + 1, 4):
            if fabs(a[i][k]) > fabs(a[p][k]):
                p = i
        if fabs(a[p][k]) <= PIVOT_RTOL * scale:
            return SINGULAR
        if p != k:
            for j in range(4):
                tmp = a[k][j]; a[k][j] = a[p][j]; a[p][j] = tmp
            for c in range(2):
                tmp = b[k][c]; b[k][c] = b[p][c]; b[p][c] = tmp
        piv = a[k][k]
        for i in range(k + 1, 4):
            f = a[i][k] / piv
            if f != 0.0:
                for j in range(k, 4):
                    a[i][j] -= f * a[k][j]
                b[i][0] -= f * b[k][0]
                b[i][1] -= f * b[k][1]
    for i in range(3, -1, -1):
        for c in range(2):
            acc = b[i][c]
            for j in range(i + 1, 4):
                acc -= a[i][j] * x[j][c]
            x[i][c] = acc / a[i][i]
    return OK


cdef int _evaluate(const double* prm, const double* s, double v_ref, double i_load,
                   bint asc, bint want_diag, double* deriv, double* diag) noexcept nogil:
    # diag = (v_d, v_q, residual_norm, f_norm)
    cdef double rs = prm[0], ld = prm[1], lq = prm[2], lam = prm[3], wr = prm[4]
    cdef double r_load = prm[5], c_bus = prm[6], kp_v = prm[7], ki_v = prm[8]
    cdef double kp_id = prm[9], ki_id = prm[10], kp_iq = prm[11], ki_iq = prm[12], sign = prm[13]
    cdef double v_dc = s[0], zeta_v = s[1], i_d = s[2], zeta_d = s[3], i_q = s[4], zeta_q = s[5]
    cdef double iq_ref, br_d, br_q, d_d0, d_q0, f0, f1, v_d = 0.0, v_q = 0.0
    cdef double gx[4][2]
    cdef double gz[4][4]
    cdef double x[4][2]
    cdef double t[4]
    cdef double b00, b21, m00, m11, e0, e1, e2, e3, d_d, d_q
    cdef int i, j, status

    if not v_dc > 0.0:
        return NONPHYSICAL if isfinite(v_dc) else NONFINITE

    iq_ref = sign * (kp_v * (v_ref - v_dc) + ki_v * zeta_v)
    br_d = -kp_id * i_d + ki_id * zeta_d - wr * lq * i_q
    br_q = kp_iq * (iq_ref - i_q) + ki_iq * zeta_q + wr * ld * i_d + wr * lam
    d_d0 = 2.0 * br_d / v_dc
    d_q0 = 2.0 * br_q / v_dc
    f0 = -v_dc / (r_load * c_bus) + 0.75 / c_bus * (d_d0 * i_d + d_q0 * i_q) - i_load / c_bus
    f1 = v_ref - v_dc

    diag[2] = 0.0
    diag[3] = 0.0
    if asc or want_diag:
        for i in range(4):
            for j in range(4):
                gz[i][j] = 0.0
            gx[i][0] = 0.0
            gx[i][1] = 0.0
        gx[2][0] = kp_iq * (-sign * kp_v) / lq
        gx[2][1] = kp_iq * (sign * ki_v) / lq
        gx[3][0] = -sign * kp_v
        gx[3][1] = sign * ki_v
        gz[0][0] = -(rs + kp_id) / ld
        gz[0][1] = ki_id / ld
        gz[1][0] = -1.0
        gz[2][2] = -(rs + kp_iq) / lq
        gz[2][3] = ki_iq / lq
        gz[3][2] = -1.0
        status = _solve4(gz, gx, x)
        if status != OK:
            return status
        for i in range(4):
            t[i] = -(x[i][0] * f0 + x[i][1] * f1)
        b00 = v_dc / (2.0 * ld)
        b21 = v_dc / (2.0 * lq)
        if asc:
            m00 = b00 * b00
            m11 = b21 * b21
            v_d = (m11 * b00 * t[0]) / (m00 * m11)
            v_q = (m00 * b21 * t[2]) / (m00 * m11)
        if want_diag:
            e0 = b00 * v_d - t[0]
            e1 = -t[1]
            e2 = b21 * v_q - t[2]
            e3 = -t[3]
            diag[2] = sqrt(e0 * e0 + e1 * e1 + e2 * e2 + e3 * e3)
            diag[3] = sqrt(f0 * f0 + f1 * f1)
    diag[0] = v_d
    diag[1] = v_q

    d_d = d_d0 + v_d
    d_q = d_q0 + v_q
    deriv[0] = -v_dc / (r_load * c_bus) + 0.75 / c_bus * (d_d * i_d + d_q * i_q) - i_load / c_bus
    deriv[1] = f1
    deriv[2] = -rs / ld * i_d + wr * lq / ld * i_q + d_d * v_dc / (2.0 * ld)
    deriv[3] = -i_d
    deriv[4] = -rs / lq * i_q - wr * ld / lq * i_d - wr / lq * lam + d_q * v_dc / (2.0 * lq)
    deriv[5] = iq_ref - i_q
    return OK


def pmsm_run(params, state0, double dt, v_ref, i_load, asc):
    cdef double[::1] prm = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] vr = np.ascontiguousarray(v_ref, dtype=np.float64)
    cdef double[::1] il = np.ascontiguousarray(i_load, dtype=np.float64)
    cdef Py_ssize_t n = vr.shape[0] - 1
    if prm.shape[0] != 14 or il.shape[0] != n + 1:
        raise ValueError("bad parameter or schedule length")
    states_arr = np.empty((n + 1, 6))
    inj_arr = np.zeros((n + 1, 2))
    res_arr = np.zeros(n + 1)
    fn_arr = np.zeros(n + 1)
    cdef double[:, ::1] states = states_arr
    cdef double[:, ::1] inj = inj_arr
    cdef double[::1] res = res_arr
    cdef double[::1] fn = fn_arr
    cdef double s[6]
    cdef double tmp[6]
    cdef double k1[6]
    cdef double k2[6]
    cdef double k3[6]
    cdef double k4[6]
    cdef double diag[4]
    cdef double h = dt, half = 0.5 * dt
    cdef bint use_asc = bool(asc)
    cdef Py_ssize_t k, done = 0
    cdef int i, status = OK
    cdef double[::1] s0 = np.ascontiguousarray(state0, dtype=np.float64)
    for i in range(6):
        s[i] = s0[i]

    with nogil:
        for k in range(n + 1):
            status = _evaluate(&prm[0], s, vr[k], il[k], use_asc, True, k1, diag)
            if status != OK:
                break
            for i in range(6):
                states[k, i] = s[i]
            inj[k, 0] = diag[0]
            inj[k, 1] = diag[1]
            res[k] = diag[2]
            fn[k] = diag[3]
            done = k + 1
            if k == n:
                break
            for i in range(6):
                tmp[i] = s[i] + half * k1[i]
            status = _evaluate(&prm[0], tmp, vr[k], il[k], use_asc, False, k2, diag)
            if status != OK:
                break
            for i in range(6):
                tmp[i] = s[i] + half * k2[i]
            status = _evaluate(&prm[0], tmp, vr[k], il[k], use_asc, False, k3, diag)
            if status != OK:
                break
            for i in range(6):
                tmp[i] = s[i] + h * k3[i]
            status = _evaluate(&prm[0], tmp, vr[k], il[k], use_asc, False, k4, diag)
            if status != OK:
                break
            for i in range(6):
                s[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                if not isfinite(s[i]):
                    status = NONFINITE
            if status != OK:
                done = k + 1
                break

    if status != OK:
        return (status, done, states_arr[:done], inj_arr[:done], res_arr[:done], fn_arr[:done])
    return (OK, n, states_arr, inj_arr, res_arr, fn_arr)
