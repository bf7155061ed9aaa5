"""
Dense linear algebra: products, singular value decompositions and the
quantities derived from them (spectral norm, truncation rank).

Matrices are float64 numpy arrays. Two SVD backends are available: LAPACK
through scipy (default) and a one-sided Jacobi iteration, selected with the
``svd_backend`` setting or the ``backend`` argument.
"""
from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from bregman_rom.config import settings
from bregman_rom.exceptions import NonFiniteError, ShapeMismatchError

Mat = NDArray[np.float64]

JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 80


class SvdFactors(NamedTuple):
    """Thin SVD ``a = u @ diag(s) @ vt`` with s non-increasing."""
    u: Mat
    s: NDArray[np.float64]
    vt: Mat

    def reconstruct(self, rank: Optional[int] = None) -> Mat:
        """Rank-``rank`` reconstruction (full rank when omitted)."""
        r = len(self.s) if rank is None else rank
        return (self.u[:, :r] * self.s[:r]) @ self.vt[:r]


def as_mat(a, name: str = "matrix") -> Mat:
    """Validate and convert ``a`` to a finite, non-empty float64 2-D array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be two-dimensional", actual=arr.shape)
    if arr.size == 0:
        raise ShapeMismatchError(f"{name} must be non-empty", actual=arr.shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def matmul(a: Mat, b: Mat) -> Mat:
    """Matrix product with a shape check naming both operands."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _lapack_svd(a: Mat) -> SvdFactors:
    try:
        u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesdd", check_finite=False)
    except np.linalg.LinAlgError:
        # gesdd can fail to converge; retry with gesvd
        u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd", check_finite=False)
    return SvdFactors(u, s, vt)


def _complete_columns(q: Mat, n_cols: int) -> Mat:
    """Extend orthonormal columns ``q`` (m x r) to ``n_cols`` orthonormal columns."""
    m, r = q.shape
    if r == n_cols:
        return q
    basis, _ = np.linalg.qr(np.hstack([q, np.eye(m)]))
    return np.hstack([q, basis[:, r:n_cols]])


def jacobi_svd(a: Mat) -> SvdFactors:
    """
    One-sided (Hestenes) Jacobi SVD.

    Columns of a working copy are rotated pairwise until every pair is
    orthogonal to ``JACOBI_TOL`` relative accuracy; the column norms are then
    the singular values.
    """
    a = as_mat(a)
    m, n = a.shape
    if m < n:
        f = jacobi_svd(a.T)
        return SvdFactors(f.vt.T.copy(), f.s, f.u.T.copy())

    work = a.copy()
    v = np.eye(n)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp = work[:, p]
                wq = work[:, q]
                alpha = wp @ wp
                beta = wq @ wq
                gamma = wp @ wq
                if gamma == 0.0 or abs(gamma) <= JACOBI_TOL * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * wp - s * wq
                new_q = s * wp + c * wq
                work[:, p] = new_p
                work[:, q] = new_q
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            break

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    cutoff = sigma[0] * 1e-13 if sigma[0] > 0 else 0.0
    r = int(np.count_nonzero(sigma > cutoff))
    u = work[:, :r] / sigma[:r]
    u = _complete_columns(u, n)
    return SvdFactors(u, sigma, v.T.copy())


def svd(a: Mat, backend: Optional[str] = None) -> SvdFactors:
    """
    Thin singular value decomposition.

    Args:
        a: non-empty finite matrix (m x n)
        backend: "lapack" or "jacobi"; defaults to the configured backend

    Returns:
        SvdFactors with u (m x k), s (k,), vt (k x n), k = min(m, n)

    Raises:
        NonFiniteError: the input has NaN/Inf entries
        ShapeMismatchError: the input is empty or not 2-D
    """
    a = as_mat(a)
    backend = (backend or settings.svd_backend).lower()
    if backend == "jacobi":
        return jacobi_svd(a)
    return _lapack_svd(a)


def singular_values(a: Mat, backend: Optional[str] = None) -> NDArray[np.float64]:
    """Singular values only, non-increasing."""
    a = as_mat(a)
    if (backend or settings.svd_backend).lower() == "jacobi":
        return jacobi_svd(a).s
    return scipy.linalg.svdvals(a, check_finite=False)


def spectral_norm(a: Mat, backend: Optional[str] = None) -> float:
    """Largest singular value (operator 2-norm)."""
    return float(singular_values(a, backend)[0])


def truncation_rank(s, eps: float) -> int:
    """
    Smallest r such that s[r] <= eps (0-based, s[len] taken as 0).

    At least one value is kept whenever any singular value is positive.
    """
    if eps < 0:
        raise ValueError(f"truncation level must be nonnegative, got {eps}")
    s = np.asarray(s, dtype=np.float64)
    r = int(np.count_nonzero(s > eps))
    if r == 0 and np.any(s > 0):
        r = 1
    return r
