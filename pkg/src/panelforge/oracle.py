"""Slow, obviously-correct references and residual calculators.

Everything here is single-threaded and unblocked; the accuracy bounds of the
fast kernels are stated against these implementations.  They ship with the
library (not only the tests) so the benchmark CLI can verify results on
request.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import Transpose

#: 64-bit unit roundoff, the epsilon used by every normalized residual.
UNIT_ROUNDOFF = 2.0 ** -53


@dataclass(frozen=True)
class Residual:
    """Nondimensional backward-error ratio (>= 0, finite for finite input)."""

    value: float


def _as2d(x) -> np.ndarray:
    return np.asarray(getattr(x, "array", x), dtype=np.float64)


def naive_gemm(c, a, b, ta: Transpose = Transpose.NONE,
               tb: Transpose = Transpose.NONE):
    """c += op(a) @ op(b) as a plain triple loop with the inner index
    ascending over k.

    Vectorized as a rank-1 update per k step; element-wise this performs
    exactly the same multiply-then-add sequence as the scalar triple loop,
    so small-case comparisons against the blocked kernel can be bitwise.
    """
    cv = _as2d(c)
    av = _as2d(a)
    bv = _as2d(b)
    if ta is Transpose.TRANS:
        av = av.T
    if tb is Transpose.TRANS:
        bv = bv.T
    m, n = cv.shape
    if av.shape[0] != m or bv.shape[1] != n or av.shape[1] != bv.shape[0]:
        raise ValueError("naive_gemm dimension mismatch")
    k = av.shape[1]
    tmp = np.empty((m, n))
    for p in range(k):
        np.multiply(av[:, p, None], bv[None, p, :], out=tmp)
        np.add(cv, tmp, out=cv)


def apply_pivots_forward(a: np.ndarray, pivots) -> np.ndarray:
    """Return a copy of ``a`` with LAPACK-style interchanges applied in
    ascending order (row i swaps with 1-based row pivots[i])."""
    out = a.copy()
    for i, p in enumerate(np.asarray(pivots, dtype=np.int64)):
        r = int(p) - 1
        if r != i:
            out[[i, r], :] = out[[r, i], :]
    return out


def lu_factors(factors: np.ndarray):
    """Split a getrf-style in-place result into unit-lower L and upper U."""
    m, n = factors.shape
    kk = min(m, n)
    lower = np.tril(factors[:, :kk], -1) + np.eye(m, kk)
    upper = np.triu(factors[:kk, :])
    return lower, upper


def lu_residual(original, out) -> Residual:
    """||P A - L U||_F / (n eps ||A||_F) for an LU factorization result."""
    a = _as2d(original)
    f = _as2d(out.matrix)
    lower, upper = lu_factors(f)
    pa = apply_pivots_forward(a, out.pivots)
    n = max(a.shape[1], 1)
    norm_a = np.linalg.norm(a)
    if norm_a == 0.0:
        return Residual(float(np.linalg.norm(pa - lower @ upper)))
    value = np.linalg.norm(pa - lower @ upper) / (n * UNIT_ROUNDOFF * norm_a)
    return Residual(float(value))


def form_q(out) -> np.ndarray:
    """Materialize the m x m orthogonal factor from stored reflectors.

    Applies H_1 H_2 ... H_k to the identity, last reflector first.
    """
    f = _as2d(out.matrix)
    m = f.shape[0]
    kk = len(out.tau)
    q = np.eye(m)
    for j in range(kk - 1, -1, -1):
        tau = out.tau[j]
        if tau == 0.0:
            continue
        v = np.zeros(m - j)
        v[0] = 1.0
        v[1:] = f[j + 1:, j]
        w = q[j:, :].T @ v
        q[j:, :] -= tau * np.outer(v, w)
    return q


def qr_residual(original, out):
    """(||A - Q R||_F / (n eps ||A||_F), ||Q^T Q - I||_F / (n eps)).

    Q is formed explicitly from the stored reflectors.
    """
    a = _as2d(original)
    f = _as2d(out.matrix)
    n = max(a.shape[1], 1)
    q = form_q(out)
    r = np.triu(f)
    norm_a = np.linalg.norm(a)
    factor_err = np.linalg.norm(a - q @ r)
    factor = factor_err / (n * UNIT_ROUNDOFF * norm_a) if norm_a else factor_err
    ortho = np.linalg.norm(q.T @ q - np.eye(q.shape[0])) / (n * UNIT_ROUNDOFF)
    return Residual(float(factor)), Residual(float(ortho))
