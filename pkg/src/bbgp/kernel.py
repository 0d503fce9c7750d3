"""Matérn-3/2 ARD kernel, hyperparameter transforms and the exact (Cholesky) LML."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist
from scipy.special import expit

from .linalg import cho_solve, cholesky

SQRT3 = np.sqrt(3.0)
FLOOR = 1e-6
LOG_2PI = np.log(2.0 * np.pi)


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 30.0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(np.minimum(x, 30.0))))


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(y > 30.0, y + np.log(-np.expm1(-y)), np.log(np.expm1(np.minimum(y, 30.0))))


def to_constrained(u):
    return FLOOR + softplus(u)


def to_unconstrained(c):
    return softplus_inv(np.asarray(c, dtype=float) - FLOOR)


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    """Constrained GP hyperparameters.

    The unconstrained vector is ordered ``[lengthscales..., signal_variance,
    noise_variance, mean]``; positive entries map through
    ``1e-6 + softplus(u)``, the mean is untransformed.
    """

    lengthscales: np.ndarray
    signal_variance: float
    noise_variance: float
    mean: float = 0.0

    def __post_init__(self):
        ell = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ell.setflags(write=False)
        object.__setattr__(self, "lengthscales", ell)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        object.__setattr__(self, "mean", float(self.mean))
        values = np.concatenate([ell, [self.signal_variance, self.noise_variance, self.mean]])
        if not np.all(np.isfinite(values)):
            raise ValueError("hyperparameters must be finite")
        if np.any(values[:-1] < FLOOR * (1 - 1e-12)):
            raise ValueError(f"positive hyperparameters must be >= {FLOOR}")

    def __eq__(self, other):
        if not isinstance(other, Hyperparameters):
            return NotImplemented
        return bool(np.array_equal(self.to_vector(), other.to_vector()))

    def __hash__(self):
        return hash(self.to_vector().tobytes())

    def to_vector(self):
        """Constrained values in unconstrained-vector order."""
        return np.concatenate([self.lengthscales, [self.signal_variance, self.noise_variance, self.mean]])

    @classmethod
    def initial(cls, dim):
        return cls(np.ones(dim), 1.0, 1.0, 0.0)

    @property
    def dim(self):
        return len(self.lengthscales)

    @property
    def size(self):
        return self.dim + 3

    def to_unconstrained(self):
        pos = np.concatenate([self.lengthscales, [self.signal_variance, self.noise_variance]])
        return np.concatenate([to_unconstrained(pos), [self.mean]])

    @classmethod
    def from_unconstrained(cls, u):
        u = np.asarray(u, dtype=float)
        pos = to_constrained(u[:-1])
        return cls(pos[:-2], pos[-2], pos[-1], u[-1])

    def transform_jacobian(self):
        """d(constrained)/d(unconstrained) for every coordinate (diagonal)."""
        u = self.to_unconstrained()
        jac = expit(u)
        jac[-1] = 1.0
        return jac

    def as_dict(self):
        return {
            "lengthscales": [float(v) for v in self.lengthscales],
            "signal_variance": self.signal_variance,
            "noise_variance": self.noise_variance,
            "mean": self.mean,
        }


def matern32(x, x2, lengthscales, signal_variance):
    d = np.sqrt(np.sum(((np.asarray(x, float) - np.asarray(x2, float)) / lengthscales) ** 2))
    return signal_variance * (1.0 + SQRT3 * d) * np.exp(-SQRT3 * d)


def _scaled_distance(X1, X2, lengthscales):
    return cdist(X1 / lengthscales, X2 / lengthscales)


def _sq_diff(X, m):
    col = X[:, m : m + 1]
    return cdist(col, col, "sqeuclidean")


def cross_covariance(X1, X2, hp):
    """Noise-free Matérn-3/2 covariance between two input sets."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    d = _scaled_distance(X1, X2, hp.lengthscales)
    return hp.signal_variance * (1.0 + SQRT3 * d) * np.exp(-SQRT3 * d)


def kernel_matrix(X, hp):
    """K = k(X, X) + noise_variance * I."""
    K = cross_covariance(X, X, hp)
    K[np.diag_indices_from(K)] += hp.noise_variance
    return K


def kernel_derivatives(X, hp):
    """dK/du for every unconstrained coordinate, as a list of n x n matrices.

    The mean coordinate does not enter K, so its matrix is zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    jac = hp.transform_jacobian()
    d = _scaled_distance(X, X, hp.lengthscales)
    expo = np.exp(-SQRT3 * d)
    Kf = hp.signal_variance * (1.0 + SQRT3 * d) * expo
    out = []
    for m, ell in enumerate(hp.lengthscales):
        sq = _sq_diff(X, m)
        # dk/dl = 3 s2 exp(-sqrt3 d) (dx/l)^2 / l, finite at d = 0
        out.append(jac[m] * 3.0 * hp.signal_variance * expo * sq / ell**3)
    out.append(jac[-3] * Kf / hp.signal_variance)
    out.append(jac[-2] * np.eye(n))
    out.append(np.zeros((n, n)))
    return out


def contract_derivatives(X, hp, W):
    """Return <dK/du_j, W> for all coordinates without storing every dK/du_j.

    ``W`` must be symmetric. The mean entry is zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    jac = hp.transform_jacobian()
    d = _scaled_distance(X, X, hp.lengthscales)
    expo = np.exp(-SQRT3 * d)
    g = np.zeros(hp.size)
    EW = expo * W
    for m, ell in enumerate(hp.lengthscales):
        sq = _sq_diff(X, m)
        g[m] = jac[m] * 3.0 * hp.signal_variance / ell**3 * np.sum(EW * sq)
    g[-3] = jac[-3] * np.sum((1.0 + SQRT3 * d) * EW)
    g[-2] = jac[-2] * np.trace(W)
    return g


def exact_lml(X, y, hp):
    """Log marginal likelihood via Cholesky: -n/2 log 2pi - 1/2 logdet K - 1/2 r^T K^-1 r."""
    y = np.asarray(y, dtype=float)
    L = cholesky(kernel_matrix(X, hp))
    resid = y - hp.mean
    w = solve_triangular(L, resid, lower=True, check_finite=False)
    return -0.5 * len(y) * LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * w @ w


def exact_lml_grad(X, y, hp):
    """Gradient of :func:`exact_lml` with respect to the unconstrained coordinates."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    L = cholesky(kernel_matrix(X, hp))
    resid = y - hp.mean
    a = cho_solve(L, resid)
    Kinv = cho_solve(L, np.eye(n))
    g = contract_derivatives(X, hp, 0.5 * (np.outer(a, a) - Kinv))
    g[-1] = np.sum(a)
    return g
