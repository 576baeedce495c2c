"""Singular-perturbation structure of partitioned linear systems.

A :class:`PartitionedLinearSystem` stores the blocks of::

    dx/dt   = A11 x + A12 z
    eps dz/dt = A21 x + A22 z + B v

``epsilon`` is kept as metadata; the physical-time fast blocks are
``A21/eps``, ``A22/eps`` and ``B/eps`` (see :meth:`PartitionedLinearSystem.fast_blocks`).
Scaling by a new epsilon therefore never touches the stored matrices and is
exactly reversible.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import densemath as dm
from .errors import DimensionMismatch, InvalidEpsilon


@dataclass(frozen=True)
class PartitionedLinearSystem:
    a11: np.ndarray
    a12: np.ndarray
    a21: np.ndarray
    a22: np.ndarray
    b: np.ndarray
    epsilon: float = 1.0

    def __post_init__(self):
        a11 = dm.as_matrix(self.a11, "a11")
        nx = a11.shape[0]
        a22 = dm.as_matrix(self.a22, "a22")
        nz = a22.shape[0]
        a12 = np.asarray(self.a12, dtype=float).reshape(nx, -1) if nx else np.zeros((0, nz))
        a21 = np.asarray(self.a21, dtype=float).reshape(nz, -1) if nz else np.zeros((0, nx))
        b = np.asarray(self.b, dtype=float)
        b = b.reshape(nz, -1) if b.size else np.zeros((nz, 0))
        a12 = dm.as_matrix(a12, "a12")
        a21 = dm.as_matrix(a21, "a21")
        if a11.shape != (nx, nx) or a22.shape != (nz, nz):
            raise DimensionMismatch("a11 and a22 must be square")
        if a12.shape != (nx, nz) or a21.shape != (nz, nx):
            raise DimensionMismatch(
                f"coupling blocks have shapes {a12.shape}, {a21.shape}; expected {(nx, nz)}, {(nz, nx)}"
            )
        b = dm.as_matrix(b, "b") if b.size else b
        eps = float(self.epsilon)
        if not np.isfinite(eps) or eps <= 0.0:
            raise InvalidEpsilon(f"epsilon must be positive, got {self.epsilon!r}")
        for name, value in (("a11", a11), ("a12", a12), ("a21", a21), ("a22", a22), ("b", b)):
            value = value.copy()
            value.flags.writeable = False
            object.__setattr__(self, name, value)
        object.__setattr__(self, "epsilon", eps)

    @property
    def n_x(self):
        return self.a11.shape[0]

    @property
    def n_z(self):
        return self.a22.shape[0]

    @property
    def m(self):
        return self.b.shape[1]

    def fast_blocks(self):
        """Physical-time ``(A21, A22, B)``, i.e. the stored blocks divided by epsilon."""
        e = self.epsilon
        return self.a21 / e, self.a22 / e, self.b / e

    def full_matrix(self):
        """State matrix of the ``v = 0`` closed loop in physical time."""
        a21, a22, _ = self.fast_blocks()
        return np.block([[self.a11, self.a12], [a21, a22]])

    def input_matrix_full(self):
        """``[0; B]`` in physical time, mapping ``v`` into the stacked state."""
        _, _, b = self.fast_blocks()
        return np.vstack([np.zeros((self.n_x, self.m)), b])

    def split(self, state):
        state = np.asarray(state, dtype=float)
        return state[: self.n_x], state[self.n_x:]


class BoundaryLayerSystem(NamedTuple):
    """Blocks of the system written in ``(x, y = z - h(x))`` coordinates.

    ``dx/dt = slow_block x + coupling y`` and
    ``eps dy/dt = sigma1 x + (a22 + sigma2) y``.
    """

    slow_block: np.ndarray
    coupling: np.ndarray
    sigma1: np.ndarray
    sigma2: np.ndarray
    a22: np.ndarray
    transform: np.ndarray
    epsilon: float

    def matrix(self):
        """``[[slow, A12], [sigma1, A22 + sigma2]]`` acting on ``(x, y)``."""
        return np.block([[self.slow_block, self.coupling], [self.sigma1, self.a22 + self.sigma2]])


class EigenReport(NamedTuple):
    full_no_sc: np.ndarray
    full_with_sc: np.ndarray
    reduced_union: np.ndarray
    gap_ratio: float


def _qss_product(sys):
    """``A22^{-1} A21``; invariant under epsilon scaling."""
    return dm.solve_linear(sys.a22, sys.a21)


def qss_matrix(sys):
    """Matrix ``H`` with ``h(x) = H x`` solving ``A21 x + A22 h(x) = 0``."""
    return -_qss_product(sys)


def transform_matrix(sys):
    """``T = [[I, 0], [H, I]]`` mapping ``(x, y)`` to ``(x, z)``."""
    nx, nz = sys.n_x, sys.n_z
    return np.block([[np.eye(nx), np.zeros((nx, nz))], [qss_matrix(sys), np.eye(nz)]])


def boundary_transform(sys, epsilon=None):
    """Rewrite the system in boundary-layer coordinates.

    ``epsilon`` overrides the stored value; passing 0 gives the limit in
    which both correction terms vanish.
    """
    eps = sys.epsilon if epsilon is None else float(epsilon)
    if eps < 0.0:
        raise InvalidEpsilon(f"epsilon must be non-negative, got {epsilon!r}")
    p = _qss_product(sys)
    slow = sys.a11 - sys.a12 @ p
    sigma1 = eps * (p @ sys.a11 - p @ sys.a12 @ p)
    sigma2 = eps * (p @ sys.a12)
    return BoundaryLayerSystem(slow, sys.a12.copy(), sigma1, sigma2, sys.a22.copy(), transform_matrix(sys), eps)


def reduced_system(sys):
    """Slow reduced matrix ``A11 - A12 A22^{-1} A21`` and the physical-time fast block."""
    slow = sys.a11 - sys.a12 @ _qss_product(sys)
    return slow, sys.a22 / sys.epsilon


def scale_epsilon(sys, eps):
    """Divide the fast dynamics by ``eps`` (slow blocks untouched)."""
    eps = float(eps)
    if not np.isfinite(eps) or eps <= 0.0:
        raise InvalidEpsilon(f"epsilon must be positive, got {eps!r}")
    return replace(sys, epsilon=sys.epsilon * eps)


def slow_fast_split(eigs, n_slow):
    """Partition eigenvalues by ``|Re|``: the ``n_slow`` smallest are slow."""
    eigs = np.asarray(eigs, dtype=complex)
    order = np.argsort(np.abs(eigs.real), kind="stable")
    return eigs[order[:n_slow]], eigs[order[n_slow:]]


def gap_ratio(eigs, n_slow):
    slow, fast = slow_fast_split(eigs, n_slow)
    if fast.size == 0 or slow.size == 0:
        return float("inf")
    top_slow = np.abs(slow.real).max()
    if top_slow == 0.0:
        return float("inf")
    return float(np.abs(fast.real).min() / top_slow)


def match_spectra(a, b):
    """Greedy nearest-neighbour matching of two equal-size eigenvalue sets.

    Returns index pairs ``(i, j)`` sorted by ``i`` and the matched distances.
    """
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot match {a.size} eigenvalues against {b.size}")
    dist = np.abs(a[:, None] - b[None, :])
    pairs = []
    free_a = set(range(a.size))
    free_b = set(range(b.size))
    for flat in np.argsort(dist, axis=None, kind="stable"):
        i, j = divmod(int(flat), b.size)
        if i in free_a and j in free_b:
            pairs.append((i, j))
            free_a.discard(i)
            free_b.discard(j)
    pairs.sort()
    return pairs, np.array([dist[i, j] for i, j in pairs])


def spectral_displacement(a, b):
    """Sum of matched distances between two eigenvalue multisets."""
    _, d = match_spectra(a, b)
    return float(d.sum())


def eigen_report(sys):
    from .senscond import closed_loop_conditioned

    full = dm.eigenvalues(sys.full_matrix())
    with_sc = dm.eigenvalues(closed_loop_conditioned(sys))
    slow, fast = reduced_system(sys)
    union = np.concatenate([dm.eigenvalues(slow), dm.eigenvalues(fast)])
    return EigenReport(full, with_sc, union, gap_ratio(full, sys.n_x))
