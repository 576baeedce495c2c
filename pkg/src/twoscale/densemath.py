"""Small dense real-matrix kernel.

Everything here targets matrices of order 16 or less: the partitioned
closed loops handled by the package are 4x4 to 6x6.  Arrays are plain
``numpy.ndarray`` values; numpy is used for storage and vector arithmetic,
while the factorizations themselves (LU, one-sided Jacobi SVD, Hessenberg
reduction and the Francis double-shift QR iteration) are written out here
so that every tolerance in this module is under our control.
"""

import math
from typing import Callable, NamedTuple

import numpy as np

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NonFiniteEvaluation,
    RankDeficient,
    SingularMatrix,
)

COND_LIMIT = 1e12
PIVOT_RTOL = 1e-14
RANK_RTOL = 1e-12

_EPS = np.finfo(float).eps


class SvdFactors(NamedTuple):
    """Thin SVD ``A = u @ diag(s) @ v.T`` with ``s`` nonincreasing."""

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def as_matrix(a, name="matrix"):
    """Return ``a`` as a finite 2-D float array (copy-free when possible)."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _as_square(a, name="matrix"):
    arr = as_matrix(a, name)
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# SVD and norms


def svd(a, tol=1e-15, max_sweeps=80):
    """One-sided (Hestenes) Jacobi SVD.

    Columns of a working copy are rotated pairwise until mutually
    orthogonal; the column norms are then the singular values.  Wide
    matrices are handled through their transpose.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m < n:
        f = svd(a.T, tol=tol, max_sweeps=max_sweeps)
        return SvdFactors(f.v, f.s, f.u)
    if n == 0:
        return SvdFactors(np.zeros((m, 0)), np.zeros(0), np.zeros((0, 0)))

    # Work on a copy scaled to unit max entry so the products of squared
    # column norms in the convergence test neither underflow nor overflow.
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if scale == 0.0 or not math.isfinite(scale):
        scale = 1.0
    a = a / scale
    work = a.copy()
    v = np.eye(n)
    # Columns this small relative to the whole matrix are numerically zero;
    # rotating against them only chases rounding noise.
    negligible = (_EPS * _EPS) * float(np.sum(a * a))
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp = work[:, p]
                wq = work[:, q]
                alpha = wp @ wp
                beta = wq @ wq
                gamma = wp @ wq
                if gamma == 0.0 or abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                if alpha <= negligible or beta <= negligible:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                col_p = wp.copy()
                work[:, p] = c * col_p - s * wq
                work[:, q] = s * col_p + c * wq
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            break
    else:
        raise NoConvergence(f"Jacobi SVD did not converge in {max_sweeps} sweeps")

    sing = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sing, kind="stable")
    sing = sing[order]
    work = work[:, order]
    v = v[:, order]
    u = np.zeros_like(work)
    nz = sing > 0.0
    u[:, nz] = work[:, nz] / sing[nz]
    return SvdFactors(u, sing * scale, v)


def singular_values(a):
    return svd(a).s


def spectral_norm(a):
    """Largest singular value of ``a`` (0 for an empty or zero matrix)."""
    s = singular_values(a)
    return float(s[0]) if s.size else 0.0


# ---------------------------------------------------------------------------
# LU based solves


def _lu(a):
    """Doolittle LU with partial pivoting; returns (packed LU, permutation)."""
    n = a.shape[0]
    lu = a.copy()
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        piv = lu[k, k]
        if piv != 0.0:
            lu[k + 1:, k] /= piv
            lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm


def _lu_solve(lu, perm, b):
    n = lu.shape[0]
    y = np.array(b, dtype=float)[perm]
    for i in range(n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - lu[i, i + 1:] @ y[i + 1:]) / lu[i, i]
    return y


def _checked_lu(a, cond_limit, pivot_rtol):
    lu, perm = _lu(a)
    n = a.shape[0]
    if n == 0:
        return lu, perm
    scale = spectral_norm(a)
    min_piv = float(np.min(np.abs(np.diag(lu))))
    if scale == 0.0 or min_piv < pivot_rtol * scale:
        raise SingularMatrix(f"pivot {min_piv:.3g} below {pivot_rtol:g}*||A||={pivot_rtol * scale:.3g}")
    inv = np.column_stack([_lu_solve(lu, perm, e) for e in np.eye(n)])
    cond = np.abs(a).sum(axis=0).max() * np.abs(inv).sum(axis=0).max()
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMatrix(f"condition estimate {cond:.3g} exceeds {cond_limit:g}")
    return lu, perm


def solve_linear(a, b, cond_limit=COND_LIMIT, pivot_rtol=PIVOT_RTOL):
    """Solve ``a @ x = b`` for square ``a``; ``b`` may be a vector or a matrix.

    Raises SingularMatrix when the 1-norm condition estimate exceeds
    ``cond_limit`` or a pivot falls below ``pivot_rtol * ||a||_2``.
    """
    a = _as_square(a, "A")
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise DimensionMismatch(f"rhs has {b.shape[0]} rows, A is {a.shape[0]}x{a.shape[0]}")
    lu, perm = _checked_lu(a, cond_limit, pivot_rtol)
    if b.ndim == 1:
        return _lu_solve(lu, perm, b)
    return np.column_stack([_lu_solve(lu, perm, col) for col in b.T]) if b.shape[1] else b.copy()


def inverse(a, cond_limit=COND_LIMIT, pivot_rtol=PIVOT_RTOL):
    a = _as_square(a, "A")
    return solve_linear(a, np.eye(a.shape[0]), cond_limit, pivot_rtol)


# ---------------------------------------------------------------------------
# Pseudoinverses


def _pinv_from_svd(f, rtol):
    s = f.s
    if s.size == 0:
        return np.zeros((f.v.shape[0], f.u.shape[0]))
    if s[0] == 0.0 or s[-1] < rtol * s[0]:
        raise RankDeficient(f"sigma_min/sigma_max = {s[-1] / s[0] if s[0] else 0.0:.3g} < {rtol:g}")
    return (f.v / s) @ f.u.T


def pinv_left(b, rtol=RANK_RTOL):
    """Left inverse ``(B^T B)^-1 B^T`` of a tall full-column-rank matrix, via SVD."""
    b = as_matrix(b, "B")
    if b.shape[0] < b.shape[1]:
        raise DimensionMismatch(f"left pseudoinverse needs rows >= cols, got {b.shape}")
    return _pinv_from_svd(svd(b), rtol)


def pinv_right(b, rtol=RANK_RTOL):
    """Right inverse ``B^T (B B^T)^-1`` of a wide full-row-rank matrix, via SVD."""
    b = as_matrix(b, "B")
    if b.shape[0] > b.shape[1]:
        raise DimensionMismatch(f"right pseudoinverse needs cols >= rows, got {b.shape}")
    return _pinv_from_svd(svd(b), rtol)


# ---------------------------------------------------------------------------
# Eigenvalues


def _balance(a):
    """Osborne/Parlett-Reinsch balancing with radix-2 scale factors (in place)."""
    n = a.shape[0]
    radix = 2.0
    sqrdx = radix * radix
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.abs(a[:, i]).sum() - abs(a[i, i])
            r = np.abs(a[i, :]).sum() - abs(a[i, i])
            if c == 0.0 or r == 0.0:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def hessenberg(a):
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    h = _as_square(a).copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k]
        norm_x = np.linalg.norm(x)
        if norm_x == 0.0:
            continue
        alpha = -math.copysign(norm_x, x[0])
        v = x.copy()
        v[0] -= alpha
        norm_v = np.linalg.norm(v)
        if norm_v == 0.0:
            continue
        v /= norm_v
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _hqr(a, max_iter):
    """Francis double-shift QR on an upper Hessenberg matrix (destroys ``a``)."""
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = float(np.abs(np.triu(a, -1)).sum())
    total = 0
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) <= _EPS * s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break

            total += 1
            if total > max_iter:
                raise NoConvergence(f"QR iteration exceeded {max_iter} sweeps")
            if its > 0 and its % 10 == 0:
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1

            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u <= _EPS * v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0

            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k != nn - 1:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                for i in range(l, min(nn, k + 3) + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k != nn - 1:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
    return wr + 1j * wi


def eigenvalues(a, sweeps_per_dim=100):
    """Eigenvalues of a real square matrix as a complex array.

    Balancing, Householder Hessenberg reduction, then implicitly shifted
    double-shift QR.  Complex eigenvalues come out as exact conjugate pairs.
    Raises NoConvergence after ``sweeps_per_dim * n`` QR sweeps.
    """
    a = _as_square(a, "A")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    h = hessenberg(_balance(a.copy()))
    return _hqr(h, sweeps_per_dim * n)


# ---------------------------------------------------------------------------
# Finite differences


def jacobian_fd(func: Callable[[np.ndarray], np.ndarray], point, scale=1e-6):
    """Central-difference Jacobian with step ``scale * max(1, |x_i|)`` per coordinate."""
    x0 = np.asarray(point, dtype=float).ravel()
    f0 = np.atleast_1d(np.asarray(func(x0.copy()), dtype=float))
    if not np.all(np.isfinite(f0)):
        raise NonFiniteEvaluation("function is non-finite at the base point")
    jac = np.empty((f0.size, x0.size))
    for i in range(x0.size):
        h = scale * max(1.0, abs(x0[i]))
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        fp = np.atleast_1d(np.asarray(func(xp), dtype=float))
        fm = np.atleast_1d(np.asarray(func(xm), dtype=float))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteEvaluation(f"function is non-finite when perturbing coordinate {i}")
        jac[:, i] = (fp - fm) / (xp[i] - xm[i])
    return jac
