"""Pure-Python PMSM closed-loop integrator (fallback for ``_kernel_c``).

Works on plain floats; numpy is only touched to allocate the output
arrays.  The parameter vector layout is :data:`PARAM_LAYOUT`.
"""

import math

import numpy as np

PARAM_LAYOUT = (
    "rs", "ld", "lq", "lambda_m", "omega_r", "r_load", "c_bus",
    "kp_v", "ki_v", "kp_id", "ki_id", "kp_iq", "ki_iq", "iq_ref_sign",
)

OK = 0
NONPHYSICAL = 1
NONFINITE = 2
SINGULAR = 3

PIVOT_RTOL = 1e-12


class _Abort(Exception):
    def __init__(self, status):
        self.status = status


def _solve4(a, b):
    """Solve the 4x4 system ``a X = b`` (``b`` 4x2) by partial-pivot elimination."""
    a = [row[:] for row in a]
    b = [row[:] for row in b]
    scale = max(abs(v) for row in a for v in row)
    for k in range(4):
        p = max(range(k, 4), key=lambda i: abs(a[i][k]))
        if abs(a[p][k]) <= PIVOT_RTOL * scale:
            raise _Abort(SINGULAR)
        if p != k:
            a[k], a[p] = a[p], a[k]
            b[k], b[p] = b[p], b[k]
        piv = a[k][k]
        for i in range(k + 1, 4):
            f = a[i][k] / piv
            if f != 0.0:
                for j in range(k, 4):
                    a[i][j] -= f * a[k][j]
                b[i][0] -= f * b[k][0]
                b[i][1] -= f * b[k][1]
    x = [[0.0, 0.0] for _ in range(4)]
    for i in range(3, -1, -1):
        for c in range(2):
            acc = b[i][c]
            for j in range(i + 1, 4):
                acc -= a[i][j] * x[j][c]
            x[i][c] = acc / a[i][i]
    return x


def _evaluate(prm, s, v_ref, i_load, asc, want_diag):
    """Return ``(deriv, v_d, v_q, residual_norm, f_norm)`` at state ``s``.

    Diagnostics are only filled when ``want_diag``; otherwise the last two
    entries are 0.
    """
    rs, ld, lq, lam, wr, r_load, c_bus, kp_v, ki_v, kp_id, ki_id, kp_iq, ki_iq, sign = prm
    v_dc, zeta_v, i_d, zeta_d, i_q, zeta_q = s
    if not v_dc > 0.0:
        raise _Abort(NONPHYSICAL if math.isfinite(v_dc) else NONFINITE)

    iq_ref = sign * (kp_v * (v_ref - v_dc) + ki_v * zeta_v)
    br_d = -kp_id * i_d + ki_id * zeta_d - wr * lq * i_q
    br_q = kp_iq * (iq_ref - i_q) + ki_iq * zeta_q + wr * ld * i_d + wr * lam
    d_d0 = 2.0 * br_d / v_dc
    d_q0 = 2.0 * br_q / v_dc
    f0 = -v_dc / (r_load * c_bus) + 0.75 / c_bus * (d_d0 * i_d + d_q0 * i_q) - i_load / c_bus
    f1 = v_ref - v_dc

    v_d = v_q = 0.0
    res_norm = f_norm = 0.0
    if asc or want_diag:
        diq = (-sign * kp_v, sign * ki_v)
        gx = [[0.0, 0.0], [0.0, 0.0],
              [kp_iq * diq[0] / lq, kp_iq * diq[1] / lq],
              [diq[0], diq[1]]]
        gz = [[-(rs + kp_id) / ld, ki_id / ld, 0.0, 0.0],
              [-1.0, 0.0, 0.0, 0.0],
              [0.0, 0.0, -(rs + kp_iq) / lq, ki_iq / lq],
              [0.0, 0.0, -1.0, 0.0]]
        x = _solve4(gz, gx)
        # target = S f with S = -gz^{-1} gx
        t = [-(x[i][0] * f0 + x[i][1] * f1) for i in range(4)]
        b00 = v_dc / (2.0 * ld)
        b21 = v_dc / (2.0 * lq)
        if asc:
            # (B^T B)^{-1} B^T target for B = [[b00, 0], [0, 0], [0, b21], [0, 0]]
            m00 = b00 * b00
            m11 = b21 * b21
            m01 = 0.0
            det = m00 * m11 - m01 * m01
            r0 = b00 * t[0]
            r1 = b21 * t[2]
            v_d = (m11 * r0 - m01 * r1) / det
            v_q = (m00 * r1 - m01 * r0) / det
        if want_diag:
            e0 = b00 * v_d - t[0]
            e1 = -t[1]
            e2 = b21 * v_q - t[2]
            e3 = -t[3]
            res_norm = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2 + e3 * e3)
            f_norm = math.sqrt(f0 * f0 + f1 * f1)

    d_d = d_d0 + v_d
    d_q = d_q0 + v_q
    deriv = (
        -v_dc / (r_load * c_bus) + 0.75 / c_bus * (d_d * i_d + d_q * i_q) - i_load / c_bus,
        f1,
        -rs / ld * i_d + wr * lq / ld * i_q + d_d * v_dc / (2.0 * ld),
        -i_d,
        -rs / lq * i_q - wr * ld / lq * i_d - wr / lq * lam + d_q * v_dc / (2.0 * lq),
        iq_ref - i_q,
    )
    return deriv, v_d, v_q, res_norm, f_norm


def pmsm_run(params, state0, dt, v_ref, i_load, asc):
    """Fixed-step RK4 over ``len(v_ref) - 1`` steps.

    ``v_ref[k]`` and ``i_load[k]`` hold during step ``k`` and are used for
    the diagnostics of sample ``k``.  Returns ``(status, step, states,
    injections, residual_norms, f_norms)``; on failure ``step`` is the index
    of the sample that could not be produced and the arrays are truncated.
    """
    prm = tuple(float(p) for p in params)
    n = len(v_ref) - 1
    states = np.empty((n + 1, 6))
    inj = np.zeros((n + 1, 2))
    res = np.zeros(n + 1)
    fn = np.zeros(n + 1)
    s = [float(v) for v in state0]
    asc = bool(asc)
    h = float(dt)
    half = 0.5 * h
    done = 0
    try:
        for k in range(n + 1):
            vr = float(v_ref[k])
            il = float(i_load[k])
            k1, vd, vq, rn, fnorm = _evaluate(prm, s, vr, il, asc, True)
            states[k] = s
            inj[k, 0] = vd
            inj[k, 1] = vq
            res[k] = rn
            fn[k] = fnorm
            done = k + 1
            if k == n:
                break
            k2 = _evaluate(prm, [s[i] + half * k1[i] for i in range(6)], vr, il, asc, False)[0]
            k3 = _evaluate(prm, [s[i] + half * k2[i] for i in range(6)], vr, il, asc, False)[0]
            k4 = _evaluate(prm, [s[i] + h * k3[i] for i in range(6)], vr, il, asc, False)[0]
            s = [s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(6)]
            if not all(math.isfinite(v) for v in s):
                return NONFINITE, k + 1, states[: k + 1], inj[: k + 1], res[: k + 1], fn[: k + 1]
    except _Abort as exc:
        return exc.status, done, states[:done], inj[:done], res[:done], fn[:done]
    return OK, n, states, inj, res, fn
