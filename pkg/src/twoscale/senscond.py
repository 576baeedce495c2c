"""Sensitivity conditioning: the quasi-steady-state sensitivity, the
feedforward target ``dh/dt = S f`` and its realisation through the input
channel ``B v`` (exact or least-squares)."""

import enum
from dataclasses import dataclass

import numpy as np

from . import densemath as dm
from .errors import (
    DimensionMismatch,
    ModeShapeMismatch,
    RankDeficient,
    SingularJacobian,
    SingularMatrix,
)
from .sptheory import qss_matrix


class Mode(enum.Enum):
    NONE = "none"
    EXACT_SQUARE = "exact-square"
    EXACT_WIDE = "exact-wide"
    APPROXIMATE = "approximate"


def select_mode(n_z, m):
    """Mode implied by the shape of an ``n_z x m`` input matrix."""
    if m == n_z:
        return Mode.EXACT_SQUARE
    if m > n_z:
        return Mode.EXACT_WIDE
    return Mode.APPROXIMATE


def resolve_mode(text, n_z, m):
    """Turn a mode name into a :class:`Mode` for an ``n_z x m`` input matrix.

    Besides the enum values this accepts ``auto`` (pick by shape), ``exact``
    (square or wide, whichever fits) and ``approx``.
    """
    if isinstance(text, Mode):
        mode = text
    else:
        key = str(text).strip().lower()
        if key == "auto":
            return select_mode(n_z, m)
        if key == "exact":
            mode = select_mode(n_z, m)
            if mode is Mode.APPROXIMATE:
                raise ModeShapeMismatch(f"exact conditioning needs m >= n_z, input matrix is {n_z}x{m}")
            return mode
        if key == "approx":
            key = Mode.APPROXIMATE.value
        try:
            mode = Mode(key)
        except ValueError:
            raise ModeShapeMismatch(f"unknown mode {text!r}") from None
    _check_mode(mode, n_z, m)
    return mode


def _check_mode(mode, n_z, m):
    if mode is Mode.NONE:
        return
    expected = select_mode(n_z, m)
    if mode is not expected:
        raise ModeShapeMismatch(f"mode {mode.value} is not valid for a {n_z}x{m} input matrix ({expected.value} is)")


@dataclass(frozen=True)
class ConditioningResult:
    v: np.ndarray
    target: np.ndarray
    residual: np.ndarray
    residual_norm: float
    mode: Mode


# ---------------------------------------------------------------------------
# Sensitivity


def sensitivity_linear(sys):
    """``S = -A22^{-1} A21`` (independent of the state and of epsilon)."""
    return qss_matrix(sys)


def sensitivity_from_jacobians(gx, gz, cond_limit=dm.COND_LIMIT):
    """``S = -(grad_z g)^{-1} grad_x g``; SingularJacobian when ill-conditioned."""
    try:
        return -dm.solve_linear(gz, gx, cond_limit=cond_limit)
    except SingularJacobian:
        raise
    except SingularMatrix as exc:
        raise SingularJacobian(f"grad_z g is singular: {exc}") from exc


def sensitivity_nonlinear(plant, x, z, refs=None):
    """Sensitivity of the quasi-steady state of ``plant`` at ``(x, z)``.

    Uses the plant's analytic Jacobians when it has them, finite
    differences of its fast dynamics (with ``v = 0``) otherwise.
    """
    gx, gz = plant.fast_jacobians(x, z, refs)
    return sensitivity_from_jacobians(gx, gz)


def conditioning_target(s, f_value):
    s = np.asarray(s, dtype=float)
    f_value = np.asarray(f_value, dtype=float).ravel()
    if s.ndim != 2 or s.shape[1] != f_value.size:
        raise DimensionMismatch(f"S has shape {s.shape}, f has {f_value.size} entries")
    return s @ f_value


# ---------------------------------------------------------------------------
# Injection


def injection_operator(b, mode, p=None):
    """Return ``(K, offset)`` with ``v = K @ target + offset`` for the given mode."""
    b = dm.as_matrix(b, "B")
    n_z, m = b.shape
    _check_mode(mode, n_z, m)
    offset = np.zeros(m)
    if mode is Mode.NONE:
        k = np.zeros((m, n_z))
    elif mode is Mode.EXACT_SQUARE:
        k = dm.inverse(b)
    elif mode is Mode.EXACT_WIDE:
        k = dm.pinv_right(b)
        if p is not None:
            p = np.asarray(p, dtype=float).ravel()
            if p.size != m:
                raise DimensionMismatch(f"free vector p needs {m} entries, got {p.size}")
            offset = (np.eye(m) - k @ b) @ p
    else:
        k = dm.pinv_left(b)
    return k, offset


def solve_injection(b, target, mode=None, p=None):
    """Solve ``B v = target`` exactly or in the least-squares sense.

    ``mode=None`` picks the mode from the shape of ``B``.  In exact-wide
    mode the free vector ``p`` (default zero) adds a null-space component.
    """
    b = dm.as_matrix(b, "B")
    target = np.asarray(target, dtype=float).ravel()
    if target.size != b.shape[0]:
        raise DimensionMismatch(f"target has {target.size} entries, B has {b.shape[0]} rows")
    if mode is None:
        mode = select_mode(*b.shape)
    k, offset = injection_operator(b, mode, p)
    v = k @ target + offset
    residual = b @ v - target
    return ConditioningResult(v, target, residual, float(np.linalg.norm(residual)), mode)


# ---------------------------------------------------------------------------
# Linear closed loops


def _tall_projector(sys):
    _, _, b = sys.fast_blocks()
    if b.shape[1] > b.shape[0]:
        raise RankDeficient("B has more columns than rows; the least-squares projector needs a tall B")
    return b @ dm.pinv_left(b)


def residual_error_matrixform(sys, x, z, forcing=None):
    """Least-squares residual ``(I - B B+) A22^{-1} A21 xdot``.

    ``xdot = A11 x + A12 z`` plus ``forcing`` (the reference contribution to
    the slow derivative) when given.
    """
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    xdot = sys.a11 @ x + sys.a12 @ z
    if forcing is not None:
        xdot = xdot + np.asarray(forcing, dtype=float).ravel()
    proj = np.eye(sys.n_z) - _tall_projector(sys)
    return proj @ dm.solve_linear(sys.a22, sys.a21) @ xdot


def error_bound_estimate(sys):
    """Time-independent factor ``||(I - B B+) A22^{-1} A21||_2`` of the residual bound."""
    proj = np.eye(sys.n_z) - _tall_projector(sys)
    return dm.spectral_norm(proj @ dm.solve_linear(sys.a22, sys.a21))


def closed_loop_asc(sys):
    """State matrix with least-squares conditioning folded in."""
    a21, a22, _ = sys.fast_blocks()
    proj = _tall_projector(sys)
    p = dm.solve_linear(sys.a22, sys.a21)
    return np.block([[sys.a11, sys.a12], [a21 - proj @ p @ sys.a11, a22 - proj @ p @ sys.a12]])


def closed_loop_exact(sys):
    """State matrix with exact conditioning ``B v = S f`` folded in."""
    a21, a22, _ = sys.fast_blocks()
    p = dm.solve_linear(sys.a22, sys.a21)
    return np.block([[sys.a11, sys.a12], [a21 - p @ sys.a11, a22 - p @ sys.a12]])


def closed_loop_conditioned(sys):
    """Exact conditioning when ``B`` can realise it, least squares otherwise."""
    if sys.m < sys.n_z:
        return closed_loop_asc(sys)
    return closed_loop_exact(sys)


def injection_gain(sys, mode):
    """``(K, offset)`` with ``v = K @ xdot + offset`` for a linear system."""
    _, _, b = sys.fast_blocks()
    k, offset = injection_operator(b, mode)
    return k @ sensitivity_linear(sys), offset
