"""Gauss and Gauss-Radau estimates of z^T log(K) z from Lanczos tridiagonals.

For f = log (odd derivatives positive, even derivatives negative):

* the Gauss rule over-estimates z^T log(K) z,
* the Radau rule with a prescribed node >= lambda_max over-estimates it,
* the Radau rule with a prescribed node <= lambda_min under-estimates it.

The noise variance is a free lower node since K = (PSD kernel) + sigma2 I.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveRitzValue, SingularShift
from .linalg import Tridiagonal, tridiag_eigen


@dataclass(frozen=True)
class SpectralEnvelope:
    lambda_min_floor: float
    lambda_max_ceiling: float

    def __post_init__(self):
        if not 0.0 < self.lambda_min_floor <= self.lambda_max_ceiling:
            raise ValueError("need 0 < lambda_min_floor <= lambda_max_ceiling")


@dataclass(frozen=True)
class LogdetBracket:
    """Per-probe quadrature values and their probe means (nats).

    ``lower``/``upper`` bracket the Hutchinson target mean_i z_i^T log(K) z_i;
    ``gauss_mean`` is the value entering the objective.
    """

    gauss: np.ndarray
    radau_lower: np.ndarray
    radau_upper: np.ndarray

    @property
    def probes(self):
        return len(self.gauss)

    @property
    def lower(self):
        return float(np.mean(self.radau_lower))

    @property
    def upper(self):
        return float(np.mean(np.minimum(self.gauss, self.radau_upper)))

    @property
    def gauss_mean(self):
        return float(np.mean(self.gauss))

    @property
    def width(self):
        return self.upper - self.lower


def _log_quadrature(alpha, beta, znorm2):
    eig = tridiag_eigen(alpha, beta, first_row_only=True)
    if eig.values[0] <= 0.0:
        raise NonPositiveRitzValue(f"quadrature node {eig.values[0]:.3e} is not positive")
    return znorm2 * float(np.sum(eig.vectors[0] ** 2 * np.log(eig.values)))


def gauss_logdet_estimate(alpha, beta, znorm2):
    """||z||^2 e1^T log(tridiag(alpha, beta)) e1, an upper estimate of z^T log(K) z."""
    return _log_quadrature(alpha, beta, znorm2)


def radau_modify(alpha, beta, next_beta, node):
    """Extend the t x t Lanczos tridiagonal to a (t+1) x (t+1) one with ``node`` as an eigenvalue.

    Solves (T_t - node I) delta = next_beta^2 e_t through the LDL^T pivot
    recurrence and appends the diagonal entry node + delta_t.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    t = len(alpha)
    if t < 1:
        raise ValueError("need at least one Lanczos step")
    scale = max(np.max(np.abs(alpha)), abs(node), 1.0)
    if abs(next_beta) <= 1e-12 * scale:
        # invariant subspace reached: the new node is decoupled and carries no weight
        return Tridiagonal(np.append(alpha, node), np.append(beta, 0.0))
    d = alpha[0] - node
    for k in range(1, t):
        if d == 0.0:
            raise SingularShift("prescribed node makes a leading minor singular")
        d = alpha[k] - node - beta[k - 1] ** 2 / d
    if abs(d) <= 1e-15 * scale:
        raise SingularShift(f"prescribed node {node!r} coincides with a Ritz value")
    return Tridiagonal(np.append(alpha, node + next_beta**2 / d), np.append(beta, next_beta))


def radau_estimate(alpha, beta, next_beta, node, znorm2):
    """Gauss-Radau estimate of z^T log(K) z with one prescribed node."""
    ext = radau_modify(alpha, beta, next_beta, node)
    return _log_quadrature(ext.alpha, ext.beta, znorm2)


def lambda_max_upper(K):
    """Gershgorin upper bound on the largest eigenvalue of symmetric K."""
    return float(np.max(np.sum(np.abs(np.asarray(K)), axis=1)))


def probe_bracket(state, envelope, flip_radau=False):
    """Return ``(gauss, radau_lower, radau_upper)`` for a single Lanczos state.

    A broken-down state (invariant subspace) gives an exact rule and a
    collapsed bracket. If the lower Radau node is numerically a Ritz value the
    trivial bound ||z||^2 log(lambda_min_floor) is used instead.
    ``flip_radau`` swaps the prescribed nodes (fault injection for validation).
    """
    alpha = np.asarray(state.alpha)
    beta = np.asarray(state.beta)
    gauss = gauss_logdet_estimate(alpha, beta, state.znorm2)
    if state.breakdown:
        return gauss, gauss, gauss
    lo_node, hi_node = envelope.lambda_min_floor, envelope.lambda_max_ceiling
    if flip_radau:
        lo_node, hi_node = hi_node, lo_node
    try:
        lower = radau_estimate(alpha, beta, state.next_beta, lo_node, state.znorm2)
    except SingularShift:
        lower = state.znorm2 * np.log(envelope.lambda_min_floor)
    try:
        upper = radau_estimate(alpha, beta, state.next_beta, hi_node, state.znorm2)
    except SingularShift:
        upper = gauss
    return gauss, lower, upper


def logdet_bracket(states, envelope, flip_radau=False):
    """Aggregate the per-probe brackets of several Lanczos states."""
    vals = np.array([probe_bracket(s, envelope, flip_radau) for s in states], dtype=float).reshape(-1, 3)
    return LogdetBracket(vals[:, 0], vals[:, 1], vals[:, 2])
