"""Closed-loop plant models.

Two averaged converter models are provided:

* a buck converter under cascaded PI control (voltage outer loop, current
  inner loop), which is linear and maps onto a
  :class:`~twoscale.sptheory.PartitionedLinearSystem`;
* a PMSM driving an active rectifier with field-oriented dq current control
  and a dc-bus voltage outer loop, which is nonlinear and is exposed as a
  :class:`TwoTimescalePlant`.

Slow states are the outer-loop quantities, fast states the inner-loop ones.
"""

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import densemath as dm
from .errors import DimensionMismatch, InvalidParams, NoConvergence, NonPhysicalState, SingularMatrix
from .sptheory import PartitionedLinearSystem


# ---------------------------------------------------------------------------
# Generic two-timescale plant


@dataclass(frozen=True)
class TwoTimescalePlant:
    """Evaluator bundle for ``dx/dt = f(x, z)``, ``dz/dt = g(x, z) + B(x, z) v``.

    ``slow`` and ``fast`` take ``(x, z, refs, v)``; ``refs`` is a plain dict
    of reference values (may be empty) and ``v`` the conditioning input.
    ``jacobians(x, z, refs)`` returns ``(grad_x g, grad_z g)``; when absent
    they are taken by central differences of ``fast`` at ``v = 0``.
    """

    n_x: int
    n_z: int
    m: int
    slow: Callable
    fast: Callable
    input_matrix: Callable
    jacobians: Optional[Callable] = None
    state_names: tuple = ()

    def fast_jacobians(self, x, z, refs=None):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.jacobians is not None:
            return self.jacobians(x, z, refs)
        zero = np.zeros(self.m)
        gx = dm.jacobian_fd(lambda xx: self.fast(xx, z, refs, zero), x)
        gz = dm.jacobian_fd(lambda zz: self.fast(x, zz, refs, zero), z)
        return gx, gz

    def rhs(self, state, refs=None, v=None):
        x, z = state[: self.n_x], state[self.n_x:]
        if v is None:
            v = np.zeros(self.m)
        return np.concatenate([self.slow(x, z, refs, v), self.fast(x, z, refs, v)])

    @classmethod
    def from_linear(cls, sys, forcing_x=None, forcing_z=None, ref_key="r"):
        """Wrap a linear system; optional forcing columns are scaled by ``refs[ref_key]``."""
        a21, a22, b = sys.fast_blocks()
        fx = np.zeros(sys.n_x) if forcing_x is None else np.asarray(forcing_x, dtype=float)
        fz = np.zeros(sys.n_z) if forcing_z is None else np.asarray(forcing_z, dtype=float)

        def ref(refs):
            return 0.0 if not refs else refs.get(ref_key, 0.0)

        return cls(
            sys.n_x,
            sys.n_z,
            sys.m,
            slow=lambda x, z, refs, v: sys.a11 @ x + sys.a12 @ z + fx * ref(refs),
            fast=lambda x, z, refs, v: a21 @ x + a22 @ z + fz * ref(refs) + b @ v,
            input_matrix=lambda x, z: b,
            jacobians=lambda x, z, refs: (a21.copy(), a22.copy()),
        )


# ---------------------------------------------------------------------------
# Buck converter


@dataclass(frozen=True)
class BuckParams:
    r_load: float
    c_out: float
    l_ind: float
    kp_v: float
    ki_v: float
    kp_i: float
    ki_i: float
    v_in: float = 100.0
    v_ref: float = 50.0
    saturate: bool = False

    def __post_init__(self):
        for name in ("r_load", "c_out", "l_ind", "v_in"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise InvalidParams(f"{name} must be positive, got {value!r}")
        for name in ("kp_v", "ki_v", "kp_i", "ki_i"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise InvalidParams(f"{name} must be non-negative, got {value!r}")

    @classmethod
    def reference_design(cls, **overrides):
        """18.6 ohm, 510 uF, 1 mH; PI gains (1, 30) outer and (1, 700) inner."""
        values = dict(r_load=18.6, c_out=510e-6, l_ind=1e-3, kp_v=1.0, ki_v=30.0, kp_i=1.0, ki_i=700.0)
        values.update(overrides)
        return cls(**values)

    def with_gains(self, kp_v, ki_v, kp_i, ki_i):
        return dataclasses.replace(self, kp_v=kp_v, ki_v=ki_v, kp_i=kp_i, ki_i=ki_i)


class BuckModel(NamedTuple):
    """Closed-loop buck system plus the columns through which ``v_C^r`` enters."""

    system: PartitionedLinearSystem
    ref_slow: np.ndarray
    ref_fast: np.ndarray

    def forcing(self, v_ref):
        return np.concatenate([self.ref_slow, self.ref_fast]) * v_ref


BUCK_STATES = ("v_c", "zeta_vc", "i_l", "zeta_il")


def buck_open_loop(p):
    """Open-loop ``(A11, A12, A21~, A22~, B)`` before the PI controllers are closed."""
    r, c, l = p.r_load, p.c_out, p.l_ind
    a11 = np.array([[-1.0 / (r * c), 0.0], [-1.0, 0.0]])
    a12 = np.array([[1.0 / c, 0.0], [0.0, 0.0]])
    a21t = np.array([[-1.0 / l, 0.0], [0.0, 0.0]])
    a22t = np.array([[0.0, 0.0], [-1.0, 0.0]])
    b = np.array([[1.0 / l], [0.0]])
    return a11, a12, a21t, a22t, b


def buck_closedloop(p):
    """Partitioned model with ``x = (v_C, zeta_vC)`` and ``z = (i_L, zeta_iL)``."""
    a11, a12, _, _, b = buck_open_loop(p)
    l = p.l_ind
    a21 = np.array([
        [(-1.0 - p.kp_i * p.kp_v) / l, p.kp_i * p.ki_v / l],
        [-p.kp_v, p.ki_v],
    ])
    a22 = np.array([[-p.kp_i / l, p.ki_i / l], [-1.0, 0.0]])
    sys = PartitionedLinearSystem(a11, a12, a21, a22, b)
    ref_slow = np.array([0.0, 1.0])
    ref_fast = np.array([p.kp_i * p.kp_v / l, p.kp_v])
    return BuckModel(sys, ref_slow, ref_fast)


def buck_asc_term(p, x, z, v_ref=0.0):
    """Least-squares conditioning input for the buck loop, in closed form.

    With ``B = (1/L, 0)^T`` the left inverse is ``(L, 0)`` and the first row of
    the sensitivity is ``(-Kp_v, Ki_v)``, so ``v = L (Ki_v dzeta_v - Kp_v dv_C)``.
    """
    if p.ki_i == 0.0:
        raise SingularMatrix("Ki of the current loop is zero; A22 is singular")
    v_c, zeta_v = np.asarray(x, dtype=float)
    i_l = float(np.asarray(z, dtype=float)[0])
    dv_c = -v_c / (p.r_load * p.c_out) + i_l / p.c_out
    dzeta_v = v_ref - v_c
    return p.l_ind * (p.ki_v * dzeta_v - p.kp_v * dv_c)


def buck_rhs_saturated(p, state, v_ref, v):
    """Buck closed loop with the converter voltage ``u`` clipped to ``[0, V_in]``."""
    v_c, zeta_v, i_l, zeta_i = state
    i_ref = p.kp_v * (v_ref - v_c) + p.ki_v * zeta_v
    u = p.kp_i * (i_ref - i_l) + p.ki_i * zeta_i + v
    u = min(max(u, 0.0), p.v_in)
    return np.array([
        -v_c / (p.r_load * p.c_out) + i_l / p.c_out,
        v_ref - v_c,
        (-v_c + u) / p.l_ind,
        i_ref - i_l,
    ])


# ---------------------------------------------------------------------------
# PMSM with active rectifier


@dataclass(frozen=True)
class PmsmParams:
    rs: float
    ld: float
    lq: float
    lambda_m: float
    poles: int
    speed_rpm: float
    r_load: float
    c_bus: float
    kp_v: float
    ki_v: float
    kp_id: float
    ki_id: float
    kp_iq: float
    ki_iq: float
    i_load: float
    v_dc_ref: float = 540.0
    # Sign in front of the outer PI when forming the q-current reference.
    # -1 reproduces the written law literally; with the dc-link coupling used
    # here that loop is unstable, so +1 is the default.
    iq_ref_sign: float = 1.0

    def __post_init__(self):
        for name in ("rs", "ld", "lq", "r_load", "c_bus"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise InvalidParams(f"{name} must be positive, got {value!r}")
        if self.poles < 2 or self.poles % 2:
            raise InvalidParams(f"poles must be even and >= 2, got {self.poles!r}")
        if self.iq_ref_sign not in (1.0, -1.0):
            raise InvalidParams(f"iq_ref_sign must be +1 or -1, got {self.iq_ref_sign!r}")

    @property
    def omega_m(self):
        return 2.0 * math.pi * self.speed_rpm / 60.0

    @property
    def omega_r(self):
        return self.poles / 2 * self.omega_m

    @classmethod
    def reference_design(cls, **overrides):
        """Reference machine and controller values, loaded to 33.48 kW at 540 V."""
        values = dict(
            rs=5.3e-3,
            ld=0.09e-3,
            lq=0.255e-3,
            lambda_m=0.0385,
            poles=12,
            speed_rpm=8000.0,
            r_load=50.0,
            c_bus=1e-3,
            kp_v=2.0,
            ki_v=1000.0,
            kp_id=0.5,
            ki_id=2.0,
            kp_iq=0.5,
            ki_iq=2.0,
            i_load=load_current(33480.0, 540.0, 50.0),
            v_dc_ref=540.0,
        )
        values.update(overrides)
        return cls(**values)


PMSM_STATES = ("v_dc", "zeta_vdc", "i_d", "zeta_id", "i_q", "zeta_iq")


def load_current(power, v_dc, r_load):
    """Constant-current part of a dc load drawing ``power`` in total at ``v_dc``.

    The bus resistor takes ``v_dc**2 / r_load``; the rest is ``i_L v_dc``.
    """
    return power / v_dc - v_dc / r_load


def _unpack_pmsm(x, z):
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.size != 2 or z.size != 4:
        raise DimensionMismatch(f"PMSM expects x in R^2 and z in R^4, got {x.size} and {z.size}")
    return x, z


def _check_vdc(v_dc):
    if not (v_dc > 0.0):
        raise NonPhysicalState(f"dc-bus voltage must be positive, got {float(v_dc)!r} V")


def pmsm_iq_ref(p, x):
    v_dc, zeta_v = x
    return p.iq_ref_sign * (p.kp_v * (p.v_dc_ref - v_dc) + p.ki_v * zeta_v)


def pmsm_duties(p, x, z, v=(0.0, 0.0)):
    """Duty cycles from the decoupled dq current PIs, plus the conditioning input.

    ``v`` is added directly to ``(d_d, d_q)`` so that it enters the current
    dynamics through the input matrix of :func:`pmsm_input_matrix`.
    """
    x, z = _unpack_pmsm(x, z)
    v_dc = x[0]
    _check_vdc(v_dc)
    i_d, zeta_d, i_q, zeta_q = z
    wr = p.omega_r
    iq_ref = pmsm_iq_ref(p, x)
    bracket_d = p.kp_id * (0.0 - i_d) + p.ki_id * zeta_d - wr * p.lq * i_q
    bracket_q = p.kp_iq * (iq_ref - i_q) + p.ki_iq * zeta_q + wr * p.ld * i_d + wr * p.lambda_m
    return 2.0 / v_dc * bracket_d + v[0], 2.0 / v_dc * bracket_q + v[1]


def pmsm_slow(p, x, z, d_d, d_q):
    """dc-bus voltage and outer-loop integrator derivatives."""
    x, z = _unpack_pmsm(x, z)
    v_dc = x[0]
    _check_vdc(v_dc)
    i_d, _, i_q, _ = z
    c = p.c_bus
    dv = -v_dc / (p.r_load * c) + 3.0 / (4.0 * c) * (d_d * i_d + d_q * i_q) - p.i_load / c
    return np.array([dv, p.v_dc_ref - v_dc])


def pmsm_fast_closedloop(p, x, z, v=(0.0, 0.0)):
    """dq current and inner-integrator derivatives with the PI duties substituted."""
    x, z = _unpack_pmsm(x, z)
    v_dc = x[0]
    d_d, d_q = pmsm_duties(p, x, z, v)
    i_d, _, i_q, _ = z
    wr = p.omega_r
    ld, lq = p.ld, p.lq
    return np.array([
        -p.rs / ld * i_d + wr * lq / ld * i_q + d_d * v_dc / (2.0 * ld),
        0.0 - i_d,
        -p.rs / lq * i_q - wr * ld / lq * i_d - wr / lq * p.lambda_m + d_q * v_dc / (2.0 * lq),
        pmsm_iq_ref(p, x) - i_q,
    ])


def pmsm_input_matrix(p, v_dc):
    _check_vdc(v_dc)
    b = np.zeros((4, 2))
    b[0, 0] = v_dc / (2.0 * p.ld)
    b[2, 1] = v_dc / (2.0 * p.lq)
    return b


def pmsm_jacobians(p, x, z):
    """Analytic ``(grad_x g, grad_z g)`` of the closed-loop fast dynamics at ``v = 0``.

    The ``2/v_dc`` factor of the duties cancels against the ``v_dc`` that
    multiplies them, and the decoupling terms cancel the speed cross-coupling,
    so both Jacobians are state independent.  ``v_dc`` is still checked.
    """
    x, z = _unpack_pmsm(x, z)
    _check_vdc(x[0])
    ld, lq = p.ld, p.lq
    s = p.iq_ref_sign
    diq_ref = np.array([-s * p.kp_v, s * p.ki_v])
    gx = np.zeros((4, 2))
    gx[2] = p.kp_iq * diq_ref / lq
    gx[3] = diq_ref
    gz = np.array([
        [-(p.rs + p.kp_id) / ld, p.ki_id / ld, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, -(p.rs + p.kp_iq) / lq, p.ki_iq / lq],
        [0.0, 0.0, -1.0, 0.0],
    ])
    return gx, gz


def pmsm_rhs(p, state, v=(0.0, 0.0)):
    """Full six-state derivative; ``v`` acts on the duties of both the bus and the machine."""
    state = np.asarray(state, dtype=float)
    x, z = state[:2], state[2:]
    d_d, d_q = pmsm_duties(p, x, z, v)
    return np.concatenate([pmsm_slow(p, x, z, d_d, d_q), pmsm_fast_closedloop(p, x, z, v)])


def pmsm_plant(p):
    """:class:`TwoTimescalePlant` view of the PMSM rectifier.

    ``refs`` may carry ``v_dc_ref`` and ``i_load`` overriding the values in ``p``.
    """

    def params_for(refs):
        if not refs:
            return p
        return dataclasses.replace(p, **{k: refs[k] for k in ("v_dc_ref", "i_load") if k in refs})

    def slow(x, z, refs, v):
        q = params_for(refs)
        d_d, d_q = pmsm_duties(q, x, z, v)
        return pmsm_slow(q, x, z, d_d, d_q)

    return TwoTimescalePlant(
        2,
        4,
        2,
        slow=slow,
        fast=lambda x, z, refs, v: pmsm_fast_closedloop(params_for(refs), x, z, v),
        input_matrix=lambda x, z: pmsm_input_matrix(p, float(x[0])),
        jacobians=lambda x, z, refs: pmsm_jacobians(params_for(refs), x, z),
        state_names=PMSM_STATES,
    )


def pmsm_equilibrium(p, tol=1e-9, max_iter=10_000):
    """Steady state of the unconditioned loop by damped Newton iteration.

    Starts from the bus at its reference with the q current sized to carry
    the load power against the back-EMF.  Fails with NoConvergence rather
    than returning a poor point.
    """
    v0 = p.v_dc_ref
    _check_vdc(v0)
    power = v0 * (v0 / p.r_load + p.i_load)
    iq0 = power / (1.5 * p.omega_r * p.lambda_m)
    s = np.array([v0, 0.0, 0.0, 0.0, iq0, 0.0])

    def residual(state):
        return pmsm_rhs(p, state)

    f = residual(s)
    for _ in range(max_iter):
        jac = dm.jacobian_fd(residual, s)
        step = dm.solve_linear(jac, -f)
        lam = 1.0
        norm_f = np.linalg.norm(f)
        while True:
            trial = s + lam * step
            try:
                f_trial = residual(trial)
            except NonPhysicalState:
                f_trial = None
            if f_trial is not None and np.linalg.norm(f_trial) < norm_f or lam < 1e-6:
                break
            lam *= 0.5
        if f_trial is None:
            raise NoConvergence("equilibrium search left the physical region (v_dc <= 0)")
        s, f = trial, f_trial
        if np.max(np.abs(lam * step)) <= tol * max(1.0, np.max(np.abs(s))):
            return s
    raise NoConvergence(f"PMSM equilibrium not found within {max_iter} iterations")
