"""Conjugate gradients with quadratic-form brackets, and Lanczos with full reorthogonalization."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BreakdownError
from .linalg import LowRankFactor, WoodburyOperator

RESIDUAL_REFRESH = 50
BREAKDOWN_RTOL = 1e-12


def as_matvec(K):
    if callable(K):
        return K
    K = np.asarray(K)
    return lambda x: K @ x


def quad_bounds(v, r, K, sigma2):
    """Bracket y^T K^{-1} y given any v and r = y - K v (K - sigma2 I must be PSD).

    Returns ``(lower, upper)`` with lower = 2 r.v + v.Kv and
    upper = lower + r.r / sigma2.
    """
    Kv = as_matvec(K)(v)
    lower = 2.0 * (r @ v) + v @ Kv
    return lower, lower + (r @ r) / sigma2


def precond_quad_bound(v, r, K, factor, sigma2):
    """Like :func:`quad_bounds` but the upper bound uses r^T (L L^T + sigma2 I)^{-1} r.

    Valid whenever L L^T + sigma2 I <= K, e.g. for a pivoted Cholesky factor
    of K - sigma2 I; never looser than the sigma2 bound.
    """
    Kv = as_matvec(K)(v)
    lower = 2.0 * (r @ v) + v @ Kv
    op = factor if isinstance(factor, WoodburyOperator) else WoodburyOperator(factor, sigma2)
    return lower, lower + r @ op.solve(r)


@dataclass
class CGState:
    """Mutable conjugate-gradient iterate for K v = y.

    ``precond`` is a :class:`WoodburyOperator` for L L^T + sigma2 I, or None.
    ``Kv`` is tracked by recurrence and recomputed every 50 iterations.
    ``lower`` belongs to the current iterate ``v``. ``upper`` is the smallest
    upper bound seen so far and ``best_v`` the iterate that attained it; the
    residual norm of CG is not monotone, so the bound at ``v`` alone is not.
    """

    v: np.ndarray
    r: np.ndarray
    p: np.ndarray
    z: np.ndarray
    rz: float
    Kv: np.ndarray
    sigma2: float
    precond: WoodburyOperator | None = None
    iters: int = 0
    lower: float = -np.inf
    upper: float = np.inf
    best_v: np.ndarray | None = None

    @property
    def gap(self):
        return self.upper - self.lower

    def update_bounds(self):
        self.lower = 2.0 * (self.r @ self.v) + self.v @ self.Kv
        if self.precond is None:
            upper = self.lower + (self.r @ self.r) / self.sigma2
        else:
            # z = M^{-1} r already holds the preconditioned residual
            upper = self.lower + self.r @ self.z
        if self.best_v is None or upper < self.upper:
            self.upper = upper
            self.best_v = self.v.copy()


def cg_init(K, y, sigma2, v0=None, precond=None):
    """Start CG from ``v0`` (zeros by default).

    ``precond`` may be a :class:`LowRankFactor` (combined with ``sigma2``) or a
    ready-made :class:`WoodburyOperator`.
    """
    y = np.asarray(y, dtype=float)
    matvec = as_matvec(K)
    if isinstance(precond, LowRankFactor):
        precond = WoodburyOperator(precond, sigma2)
    v = np.zeros_like(y) if v0 is None else np.array(v0, dtype=float)
    Kv = matvec(v)
    r = y - Kv
    z = precond.solve(r) if precond is not None else r.copy()
    state = CGState(v=v, r=r, p=z.copy(), z=z, rz=float(r @ z), Kv=Kv, sigma2=float(sigma2), precond=precond)
    state.update_bounds()
    return state


def cg_step(state, K, y):
    """Advance ``state`` by one (preconditioned) CG iteration, in place; returns it.

    A state whose preconditioned residual is exactly zero is left unchanged.
    """
    if state.rz == 0.0:
        return state
    matvec = as_matvec(K)
    q = matvec(state.p)
    curvature = state.p @ q
    if not curvature > 0.0:
        raise BreakdownError(f"non-positive curvature p^T K p = {curvature:.3e} at iteration {state.iters}")
    step = state.rz / curvature
    state.v = state.v + step * state.p
    state.iters += 1
    if state.iters % RESIDUAL_REFRESH == 0:
        state.Kv = matvec(state.v)
    else:
        state.Kv = state.Kv + step * q
    state.r = y - state.Kv
    state.z = state.precond.solve(state.r) if state.precond is not None else state.r.copy()
    rz_new = float(state.r @ state.z)
    state.p = state.z + (rz_new / state.rz) * state.p
    state.rz = rz_new
    state.update_bounds()
    return state


def conjugate_gradient(K, y, sigma2, v0=None, precond=None, tol=1e-6, max_iters=None):
    """Run CG until ||r|| <= tol ||y||. Returns ``(state, converged)``."""
    y = np.asarray(y, dtype=float)
    state = cg_init(K, y, sigma2, v0=v0, precond=precond)
    max_iters = 10 * len(y) if max_iters is None else max_iters
    target = tol * np.linalg.norm(y)
    while np.linalg.norm(state.r) > target and state.iters < max_iters:
        if state.rz == 0.0:
            break
        cg_step(state, K, y)
    return state, bool(np.linalg.norm(state.r) <= target)


@dataclass
class LanczosState:
    """Lanczos recurrence started from probe ``z``.

    ``basis[:, :t]`` holds the orthonormal columns T, ``alpha`` (length t) and
    ``beta`` (length t - 1) the tridiagonal T^T K T. ``next_beta`` is the norm
    of the pending residual, i.e. the off-diagonal that step t + 1 would add.
    """

    z: np.ndarray
    basis: np.ndarray
    tol: float
    t: int = 0
    alpha: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    resid: np.ndarray | None = None
    next_beta: float = 0.0
    breakdown: bool = False

    @property
    def T(self):
        return self.basis[:, : self.t]

    @property
    def znorm2(self):
        return float(self.z @ self.z)

    @property
    def done(self):
        return self.breakdown or self.t >= self.basis.shape[1]


def lanczos_start(z, K=None, max_steps=None, scale=None):
    """Create an empty Lanczos state for probe ``z``.

    The breakdown threshold is 1e-12 times ``scale``, by default the largest
    diagonal entry of K (K must then be a matrix).
    """
    z = np.asarray(z, dtype=float)
    n = len(z)
    if scale is None:
        scale = float(np.max(np.diag(np.asarray(K)))) if K is not None else 1.0
    steps = n if max_steps is None else int(min(max_steps, n))
    return LanczosState(z=z, basis=np.zeros((n, steps)), tol=BREAKDOWN_RTOL * scale)


def lanczos_step(state, K):
    """Append one Lanczos vector, reorthogonalized twice against all previous ones."""
    if state.done:
        raise ValueError("Lanczos state cannot be extended (breakdown or capacity reached)")
    matvec = as_matvec(K)
    t = state.t
    if t == 0:
        q = state.z / np.sqrt(state.znorm2)
    else:
        q = state.resid / state.next_beta
        state.beta.append(state.next_beta)
    state.basis[:, t] = q
    state.t = t + 1
    u = matvec(q)
    a = float(q @ u)
    w = u - a * q
    if t > 0:
        w -= state.beta[-1] * state.basis[:, t - 1]
    Q = state.basis[:, : t + 1]
    for _ in range(2):
        w -= Q @ (Q.T @ w)
    state.alpha.append(a)
    state.resid = w
    state.next_beta = float(np.linalg.norm(w))
    if state.next_beta < state.tol or state.t == len(state.z):
        state.breakdown = True
    return state
