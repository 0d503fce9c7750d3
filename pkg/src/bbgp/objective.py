"""The bias-certified LML estimator.

The objective is

    c - 1/(2s) sum_i z_i^T T_i log(T_i^T K T_i) T_i^T z_i - 1/2 Q(v),

with Q(v) = r^T Khat^{-1} r + 2 r^T v + v^T K v an upper bound on
y^T K^{-1} y (Khat = sigma2 I, or L L^T + sigma2 I for a pivoted Cholesky
factor L of K - sigma2 I). CG (for v) and one Lanczos recurrence per probe
(for T_i) advance in lockstep until the certified bias drops below epsilon.
Gradients treat v, T_i, z_i and the preconditioner pivots as constants.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NonPositiveRitzValue
from .kernel import LOG_2PI, contract_derivatives, cross_covariance, kernel_matrix
from .krylov import cg_init, cg_step, lanczos_start, lanczos_step
from .linalg import WoodburyOperator, cholesky, pivoted_cholesky, sym_eigen
from .quadrature import LogdetBracket, SpectralEnvelope, lambda_max_upper, logdet_bracket

log = logging.getLogger(__name__)

PRECOND_RTOL = 1e-10


@dataclass
class BBGPConfig:
    """Estimator settings.

    ``max_krylov_iters=None`` means min(n, 1000). ``precond_rank=0`` disables
    the pivoted Cholesky preconditioner (and the tighter quadratic bound).
    """

    epsilon: float = 1.0
    probes: int = 1
    max_krylov_iters: int | None = None
    precond_rank: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.probes < 1:
            raise ValueError("need at least one probe")
        if self.precond_rank < 0:
            raise ValueError("precond_rank must be >= 0")
        if self.max_krylov_iters is not None and self.max_krylov_iters < 1:
            raise ValueError("max_krylov_iters must be >= 1")

    def iteration_cap(self, n):
        return min(n, 1000) if self.max_krylov_iters is None else int(self.max_krylov_iters)


@dataclass
class Auxiliary:
    """Quantities held fixed when differentiating the objective."""

    v: np.ndarray
    bases: list
    probes: list
    pivots: np.ndarray | None = None


@dataclass
class BBGPEstimate:
    value: float
    bias_bound: float
    gradient: np.ndarray | None
    iterations_used: int
    converged: bool
    logdet: LogdetBracket
    quad: tuple
    aux: Auxiliary
    lanczos_t: list = field(default_factory=list)
    cg_iters: int = 0
    history: list = field(default_factory=list)

    @property
    def v(self):
        return self.aux.v


def rademacher_probes(n, count, seed=0, step=0):
    """``count`` Rademacher vectors from a counter-based stream keyed by (seed, step)."""
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, 0, int(step)])
    rng = np.random.Generator(bitgen)
    return [rng.choice(np.array([-1.0, 1.0]), size=n) for _ in range(count)]


def bias_bound(logdet, quad):
    """Certified gap between the objective and its full-iteration value.

    Half the log-det bracket width, measured from the Gauss value that the
    objective uses, plus half the quadratic bracket width.
    """
    top = max(logdet.gauss_mean, logdet.upper)
    return 0.5 * (top - logdet.lower) + 0.5 * (quad[1] - quad[0])


def nystrom_factor(X, hp, pivots):
    """Factor L with L L^T = Kf[:, P] Kf[P, P]^{-1} Kf[P, :] for fixed pivot rows P."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    KnP = cross_covariance(X, X[pivots], hp)
    LP = cholesky(KnP[pivots])
    return solve_triangular(LP, KnP.T, lower=True, check_finite=False).T


def _gauss_frozen(M, g):
    eig = sym_eigen(0.5 * (M + M.T))
    w = eig.vectors.T @ g
    return float(w**2 @ np.log(eig.values))


def frozen_objective(X, y, hp, aux):
    """Evaluate the objective at ``hp`` with v, T_i, z_i and pivots held fixed."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    K = kernel_matrix(X, hp)
    logdet = np.mean([_gauss_frozen(T.T @ K @ T, T.T @ z) for T, z in zip(aux.bases, aux.probes)])
    r = (y - hp.mean) - K @ aux.v
    if aux.pivots is None or len(aux.pivots) == 0:
        a = r / hp.noise_variance
    else:
        a = WoodburyOperator(nystrom_factor(X, hp, aux.pivots), hp.noise_variance).solve(r)
    quad = r @ a + 2.0 * r @ aux.v + aux.v @ K @ aux.v
    return -0.5 * n * LOG_2PI - 0.5 * logdet - 0.5 * quad


def _log_divided_differences(lam):
    la, lb = lam[:, None], lam[None, :]
    diff = la - lb
    x = diff / lb
    small = np.abs(x) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(small, (1.0 - 0.5 * x) / lb, np.log1p(np.where(small, 0.0, x)) / np.where(small, 1.0, diff))
    return F


def logdet_weight_matrix(K, bases, probes):
    """Mean over probes of B_i = (T Q)(F o w w^T)(T Q)^T, so d(gauss_i) = <dK, B_i>."""
    n = K.shape[0]
    B = np.zeros((n, n))
    for T, z in zip(bases, probes):
        M = T.T @ (K @ T)
        eig = sym_eigen(0.5 * (M + M.T))
        if eig.values[0] <= 0.0:
            raise NonPositiveRitzValue(f"Ritz value {eig.values[0]:.3e} is not positive")
        w = eig.vectors.T @ (T.T @ z)
        TQ = T @ eig.vectors
        B += TQ @ (_log_divided_differences(eig.values) * np.outer(w, w)) @ TQ.T
    return B / len(bases)


def grad_logdet_term(X, hp, bases, probes, K=None):
    """Gradient of mean_i z_i^T T_i log(T_i^T K T_i) T_i^T z_i with T_i, z_i frozen."""
    K = kernel_matrix(X, hp) if K is None else K
    return contract_derivatives(X, hp, logdet_weight_matrix(K, bases, probes))


def _quad_weights(X, y, hp, v, pivots, K, factor):
    """Kernel weight W with d(Q) = <dKf, W>, plus d(Q)/d(sigma2) and d(Q)/d(mean)."""
    n = len(y)
    sigma2 = hp.noise_variance
    r = (y - hp.mean) - K @ v
    utilde = np.zeros(n)
    if pivots is None or len(pivots) == 0:
        a = r / sigma2
    else:
        L = nystrom_factor(X, hp, pivots) if factor is None else factor
        a = WoodburyOperator(L, sigma2).solve(r)
        u = solve_triangular(L[pivots].T, L.T @ a, lower=False, check_finite=False)
        utilde[pivots] = u
    va = np.outer(v, a)
    au = np.outer(a, utilde)
    W = -(va + va.T) - (au + au.T) + np.outer(utilde, utilde) - np.outer(v, v)
    return W, -2.0 * v @ a - a @ a - v @ v, -2.0 * np.sum(a) - 2.0 * np.sum(v)


def grad_quad_term(X, y, hp, v, pivots=None, K=None, factor=None):
    """Gradient of Q(v) = r^T Khat^{-1} r + 2 r^T v + v^T K v with v (and pivots) frozen.

    Khat is sigma2 I when ``pivots`` is empty, else the Nyström approximation on
    the pivot rows plus sigma2 I. ``factor`` may pass a precomputed L for those pivots.
    """
    y = np.asarray(y, dtype=float)
    K = kernel_matrix(X, hp) if K is None else K
    W, d_noise, d_mean = _quad_weights(X, y, hp, v, pivots, K, factor)
    g = contract_derivatives(X, hp, W)
    g[-2] = hp.transform_jacobian()[-2] * d_noise
    g[-1] = d_mean
    return g


def frozen_objective_grad(X, y, hp, aux, K=None, factor=None):
    """Gradient of :func:`frozen_objective`; both terms share one kernel contraction."""
    y = np.asarray(y, dtype=float)
    K = kernel_matrix(X, hp) if K is None else K
    B = logdet_weight_matrix(K, aux.bases, aux.probes)
    W, d_noise, d_mean = _quad_weights(X, y, hp, aux.v, aux.pivots, K, factor)
    g = contract_derivatives(X, hp, B + W)
    g[-2] = hp.transform_jacobian()[-2] * (np.trace(B) + d_noise)
    g[-1] = d_mean
    return -0.5 * g


def estimate_lml(X, y, hp, cfg=None, warm_v=None, step=0, with_gradient=True):
    """Adaptive estimate of the log marginal likelihood with certified bias.

    Runs one CG iteration and one Lanczos iteration per probe each round and
    stops once the bias bound is at most ``cfg.epsilon`` or the iteration
    cap is reached (``converged=False`` then; not an error).

    Parameters
    ----------
    X, y : array_like
        Inputs (n x D) and targets (n,); the constant mean ``hp.mean`` is
        subtracted internally.
    hp : Hyperparameters
    cfg : BBGPConfig
    warm_v : array_like, optional
        Initial CG iterate, typically the previous outer step's ``v``.
    step : int
        Probe counter; probes are redrawn for every distinct ``step``.
    """
    cfg = BBGPConfig() if cfg is None else cfg
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    yc = y - hp.mean
    sigma2 = hp.noise_variance
    K = kernel_matrix(X, hp)
    envelope = SpectralEnvelope(sigma2, max(lambda_max_upper(K), sigma2))

    factor = None
    pivots = None
    if cfg.precond_rank > 0:
        Kf = K.copy()
        Kf[np.diag_indices(n)] -= sigma2
        factor = pivoted_cholesky(Kf, cfg.precond_rank, residual_tol=PRECOND_RTOL * hp.signal_variance)
        pivots = factor.pivots
        factor = factor if factor.rank > 0 else None
    cg = cg_init(K, yc, sigma2, v0=warm_v, precond=factor)

    cap = cfg.iteration_cap(n)
    probes = rademacher_probes(n, cfg.probes, cfg.seed, step)
    states = [lanczos_start(z, K, max_steps=cap) for z in probes]
    const = -0.5 * n * LOG_2PI
    history = []
    rounds = 0
    converged = False
    while rounds < cap:
        rounds += 1
        cg_step(cg, K, yc)
        for s in states:
            if not s.done:
                lanczos_step(s, K)
        bracket = logdet_bracket(states, envelope)
        quad = (cg.lower, cg.upper)
        bound = bias_bound(bracket, quad)
        value = const - 0.5 * bracket.gauss_mean - 0.5 * cg.upper
        history.append({"value": value, "bias_bound": bound, "logdet": (bracket.lower, bracket.upper), "quad": quad})
        if bound <= cfg.epsilon:
            converged = True
            break
    if not converged:
        log.debug("bias bound %.3g above epsilon %.3g after %d rounds", bound, cfg.epsilon, rounds)

    aux = Auxiliary(cg.best_v.copy(), [s.T.copy() for s in states], [s.z for s in states],
                    None if factor is None else pivots)
    gradient = None
    if with_gradient:
        gradient = frozen_objective_grad(X, y, hp, aux, K=K, factor=None if factor is None else factor.L)
    return BBGPEstimate(
        value=value,
        bias_bound=bound,
        gradient=gradient,
        iterations_used=rounds,
        converged=converged,
        logdet=bracket,
        quad=quad,
        aux=aux,
        lanczos_t=[s.t for s in states],
        cg_iters=cg.iters,
        history=history,
    )
