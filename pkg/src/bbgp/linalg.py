"""Dense symmetric linear algebra: factorizations, eigensolvers, low-rank factors.

The tridiagonal eigensolver is an implicit-shift QL iteration (the classic
``tqli``), compiled with numba. It can track either the full eigenvector
matrix or only its first row, which is all Gauss quadrature needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy.linalg import lapack, solve_triangular

from .errors import NoConvergence, NotPositiveDefinite

MAX_SWEEPS = 30


def symmetrize(A, tol=1e-12):
    """Return (A + A^T)/2 after checking A is finite and symmetric to ``tol`` relative."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if np.max(np.abs(A - A.T), initial=0.0) > tol * max(scale, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class Tridiagonal:
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).ravel())
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).ravel())
        if len(self.beta) != max(len(self.alpha) - 1, 0):
            raise ValueError("off-diagonal must have length len(alpha) - 1")

    @property
    def size(self):
        return len(self.alpha)

    def dense(self):
        return np.diag(self.alpha) + np.diag(self.beta, 1) + np.diag(self.beta, -1)


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in ascending order and matching eigenvectors (columns).

    ``vectors`` may hold only the first row of the eigenvector matrix when
    produced with ``first_row_only=True``.
    """

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self):
        return (self.vectors * self.values) @ self.vectors.T

    def apply(self, f):
        """Return the matrix function Q f(Lambda) Q^T."""
        return (self.vectors * f(self.values)) @ self.vectors.T


@dataclass(frozen=True)
class LowRankFactor:
    """Factor L (n x p) with pivot order; approximates A by L L^T."""

    L: np.ndarray
    pivots: np.ndarray

    @property
    def rank(self):
        return self.L.shape[1]


def cholesky(A):
    """Lower-triangular Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefinite
        With the zero-based index of the first non-positive pivot.
    """
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    c, info = lapack.dpotrf(A, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:
        raise ValueError(f"invalid argument {-info} to dpotrf")
    return c


def cho_solve(L, b):
    """Solve (L L^T) x = b given a lower Cholesky factor."""
    w = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, w, lower=False, check_finite=False)


@numba.njit(cache=True)
def _tqli(d, e, Z, max_sweeps):
    # d: diagonal (overwritten with eigenvalues); e: off-diagonal padded to len(d)
    # Z: rows of the eigenvector matrix to accumulate (identity rows on entry)
    n = d.shape[0]
    nrows = Z.shape[0]
    eps = np.finfo(np.float64).eps
    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            if sweeps == max_sweeps:
                return l
            sweeps += 1
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0.0 else -r))
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                for k in range(nrows):
                    f = Z[k, i + 1]
                    Z[k, i + 1] = s * Z[k, i] + c * f
                    Z[k, i] = c * Z[k, i] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return -1


def tridiag_eigen(alpha, beta=None, first_row_only=False):
    """Eigen-decomposition of a symmetric tridiagonal matrix by implicit QL.

    Parameters
    ----------
    alpha : array_like or Tridiagonal
        Diagonal (length t), or a :class:`Tridiagonal`.
    beta : array_like
        Off-diagonal (length t - 1).
    first_row_only : bool
        Accumulate only the first row of the eigenvector matrix (O(t^2)
        instead of O(t^3)); enough for Gauss quadrature weights.

    Raises
    ------
    NoConvergence
        If some eigenvalue needs more than 30 QL sweeps.
    """
    if isinstance(alpha, Tridiagonal):
        alpha, beta = alpha.alpha, alpha.beta
    d = np.array(alpha, dtype=float).ravel()
    t = d.shape[0]
    e = np.zeros(t)
    if t > 1:
        e[: t - 1] = np.asarray(beta, dtype=float).ravel()
    Z = np.eye(t)[:1].copy() if first_row_only else np.eye(t)
    if t > 1:
        failed = _tqli(d, e, Z, MAX_SWEEPS)
        if failed >= 0:
            raise NoConvergence(f"QL iteration exceeded {MAX_SWEEPS} sweeps at eigenvalue {failed}")
    order = np.argsort(d, kind="stable")
    return EigenDecomposition(d[order], Z[:, order])


def householder_tridiagonalize(A):
    """Reduce symmetric A to tridiagonal form: A = Q tridiag(alpha, beta) Q^T."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    Q = np.eye(n)
    for k in range(n - 2):
        x = A[k + 1 :, k]
        xnorm = np.linalg.norm(x)
        if xnorm == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(xnorm, x[0])
        v /= np.linalg.norm(v)
        A[k + 1 :, :] -= 2.0 * np.outer(v, v @ A[k + 1 :, :])
        A[:, k + 1 :] -= 2.0 * np.outer(A[:, k + 1 :] @ v, v)
        Q[:, k + 1 :] -= 2.0 * np.outer(Q[:, k + 1 :] @ v, v)
    return Tridiagonal(np.diag(A).copy(), np.diag(A, 1).copy()), Q


def sym_eigen(A):
    """Symmetric eigen-decomposition via Householder reduction and implicit QL."""
    A = symmetrize(A)
    tri, Q = householder_tridiagonalize(A)
    eig = tridiag_eigen(tri)
    return EigenDecomposition(eig.values, Q @ eig.vectors)


def sym_logm(A):
    """Matrix logarithm of a symmetric positive definite matrix."""
    eig = sym_eigen(A)
    if eig.values[0] <= 0.0:
        raise NotPositiveDefinite(int(np.argmin(eig.values)), "matrix logarithm needs positive eigenvalues")
    return eig.apply(np.log)


def pivoted_cholesky(A, max_rank, residual_tol=0.0):
    """Greedy diagonally pivoted partial Cholesky factorization of a PSD matrix.

    At each step the row with the largest residual diagonal is eliminated
    (ties go to the lowest index). Stops after ``max_rank`` steps or when the
    largest residual diagonal is at most ``residual_tol``.

    Residuals at round-off level (n * eps * max diagonal) also stop the
    factorization, so rank-deficient inputs give a factor of their rank.

    Returns
    -------
    LowRankFactor
        ``L`` with ``A ~= L @ L.T`` and the pivot rows in elimination order.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    p = int(min(max_rank, n))
    L = np.zeros((n, p))
    resid = np.diag(A).copy()
    # pivots at round-off level carry no information and blow up the column
    floor = max(residual_tol, n * np.finfo(float).eps * max(resid.max(initial=0.0), 0.0))
    pivots = []
    for k in range(p):
        i = int(np.argmax(resid))
        if resid[i] <= floor or resid[i] <= 0.0:
            break
        col = A[:, i] - L[:, :k] @ L[i, :k]
        col /= np.sqrt(resid[i])
        L[:, k] = col
        resid -= col**2
        resid[i] = 0.0
        pivots.append(i)
    k = len(pivots)
    return LowRankFactor(L[:, :k].copy(), np.array(pivots, dtype=int))


class WoodburyOperator:
    """Solves with L L^T + sigma2 I through a p x p inner Cholesky factor."""

    def __init__(self, factor, sigma2):
        if sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        L = factor.L if isinstance(factor, LowRankFactor) else np.asarray(factor, dtype=float)
        self.L = L
        self.sigma2 = float(sigma2)
        self.inner = cholesky(sigma2 * np.eye(L.shape[1]) + L.T @ L) if L.shape[1] else None

    def matvec(self, x):
        return self.L @ (self.L.T @ x) + self.sigma2 * x

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.inner is None:
            return b / self.sigma2
        return (b - self.L @ cho_solve(self.inner, self.L.T @ b)) / self.sigma2


def woodbury_solve(factor, sigma2, b):
    """Return (L L^T + sigma2 I)^{-1} b using the matrix inversion lemma."""
    return WoodburyOperator(factor, sigma2).solve(b)
