"""Randomized property checks for the bounds the estimator relies on.

Each check draws its own instances from a seeded generator and returns
``(passed, total)``. Used by ``bbgp validate-bounds`` and the test suite.
"""
from __future__ import annotations

import numpy as np

from .kernel import Hyperparameters, kernel_matrix
from .krylov import cg_init, cg_step, lanczos_start, lanczos_step
from .linalg import WoodburyOperator, cholesky, cho_solve, pivoted_cholesky, sym_eigen, sym_logm
from .objective import BBGPConfig, estimate_lml, frozen_objective
from .quadrature import SpectralEnvelope, lambda_max_upper, probe_bracket


def random_hyperparameters(rng, dim):
    return Hyperparameters(
        lengthscales=np.exp(rng.uniform(np.log(0.1), np.log(2.0), dim)),
        signal_variance=np.exp(rng.uniform(np.log(0.2), np.log(5.0))),
        noise_variance=np.exp(rng.uniform(np.log(1e-2), np.log(1.0))),
        mean=rng.normal(scale=0.5),
    )


def random_instance(rng, n, dim=None):
    """Matérn regression instance ``(X, y, hp)`` with targets drawn from the prior."""
    dim = int(rng.integers(1, 4)) if dim is None else dim
    X = rng.uniform(size=(n, dim))
    hp = random_hyperparameters(rng, dim)
    y = hp.mean + cholesky(kernel_matrix(X, hp)) @ rng.standard_normal(n)
    return X, y, hp


def random_orthonormal(rng, n, t):
    Q, _ = np.linalg.qr(rng.standard_normal((n, t)))
    return Q


def rademacher(rng, n):
    return rng.choice(np.array([-1.0, 1.0]), size=n)


def _min_eig(A):
    return sym_eigen(A).values[0]


def check_log_compression(rng, trials=100, max_n=16, tol=1e-8):
    """log(T^T K T) - T^T log(K) T is PSD for SPD K and orthonormal T."""
    passed = 0
    for _ in range(trials):
        n = int(rng.integers(2, max_n + 1))
        t = int(rng.integers(1, n))
        if rng.random() < 0.5:
            X, _, hp = random_instance(rng, n)
            K = kernel_matrix(X, hp)
        else:
            A = rng.standard_normal((n, n))
            K = A @ A.T / n + rng.uniform(1e-2, 1.0) * np.eye(n)
        T = random_orthonormal(rng, n, t)
        M = T.T @ K @ T
        gap = sym_logm(0.5 * (M + M.T)) - T.T @ sym_logm(K) @ T
        passed += _min_eig(0.5 * (gap + gap.T)) >= -tol
    return passed, trials


def check_sandwich(rng, trials=200, max_n=32, tol=1e-8, flip_radau=False):
    """Radau(sigma2) <= z^T log(K) z <= min(Gauss, Radau(ceiling)) at every Lanczos step."""
    passed = 0
    total = 0
    for trial in range(trials):
        n = 1 if trial == 0 else int(rng.integers(2, max_n + 1))
        X, _, hp = random_instance(rng, n)
        K = kernel_matrix(X, hp)
        z = rademacher(rng, n)
        exact = z @ sym_logm(K) @ z
        env = SpectralEnvelope(hp.noise_variance, lambda_max_upper(K))
        state = lanczos_start(z, K)
        slack = tol * max(1.0, abs(exact))
        ok = True
        while not state.done:
            lanczos_step(state, K)
            if state.t < 2 and not state.breakdown:
                continue
            gauss, lower, upper = probe_bracket(state, env, flip_radau=flip_radau)
            ok &= lower <= exact + slack and exact <= min(gauss, upper) + slack
        passed += ok
        total += 1
    return passed, total


def check_cg_bracket(rng, trials=20, max_n=64, tol=1e-8):
    """Quadratic bracket contains y^T K^{-1} y at every CG step; preconditioned upper <= sigma2 upper."""
    passed = 0
    for trial in range(trials):
        n = 1 if trial == 0 else int(rng.integers(2, max_n + 1))
        X, y, hp = random_instance(rng, n)
        K = kernel_matrix(X, hp)
        yc = y - hp.mean
        exact = yc @ cho_solve(cholesky(K), yc)
        Kf = K - hp.noise_variance * np.eye(n)
        factor = pivoted_cholesky(Kf, max(1, n // 4), residual_tol=1e-10 * hp.signal_variance)
        pre = WoodburyOperator(factor, hp.noise_variance)
        state = cg_init(K, yc, hp.noise_variance)
        slack = tol * max(1.0, abs(exact))
        ok = True
        for _ in range(n):
            cg_step(state, K, yc)
            # both upper bounds at the current iterate
            upper_plain = state.lower + state.r @ state.r / hp.noise_variance
            upper_pre = state.lower + state.r @ pre.solve(state.r)
            ok &= state.lower <= exact + slack and exact <= state.upper + slack
            ok &= exact <= upper_pre + slack and upper_pre <= upper_plain + slack
        passed += ok
    return passed, trials


def check_gradient(rng, trials=20, max_n=32, rtol=1e-5, step=1e-5):
    """Analytic gradient of the frozen-auxiliary objective vs central differences."""
    passed = 0
    for trial in range(trials):
        n = 1 if trial == 0 else int(rng.integers(2, max_n + 1))
        X, y, hp = random_instance(rng, n)
        cfg = BBGPConfig(epsilon=1e-12, max_krylov_iters=int(rng.integers(1, n + 1)),
                         precond_rank=int(rng.integers(0, 4)), seed=int(rng.integers(1 << 30)))
        est = estimate_lml(X, y, hp, cfg)
        passed += gradient_matches(X, y, hp, est, rtol=rtol, step=step)
    return passed, trials


def finite_difference_gradient(X, y, hp, aux, step=1e-5):
    u = hp.to_unconstrained()
    out = np.empty(len(u))
    for j in range(len(u)):
        e = np.zeros(len(u))
        e[j] = step
        hi = frozen_objective(X, y, Hyperparameters.from_unconstrained(u + e), aux)
        lo = frozen_objective(X, y, Hyperparameters.from_unconstrained(u - e), aux)
        out[j] = (hi - lo) / (2 * step)
    return out


def gradient_matches(X, y, hp, est, rtol=1e-5, step=1e-5):
    fd = finite_difference_gradient(X, y, hp, est.aux, step)
    # relative per coordinate, floored for coordinates whose derivative is ~0
    scale = np.maximum(np.abs(fd), 1e-6 * max(1.0, np.max(np.abs(fd))))
    return bool(np.all(np.abs(est.gradient - fd) <= rtol * scale))


CHECKS = {
    "log-compression-psd": check_log_compression,
    "quadrature-sandwich": check_sandwich,
    "cg-bracket": check_cg_bracket,
    "gradient-fd": check_gradient,
}


def run_all(seed=0, scale=1.0, flip_radau=False):
    """Run every check; ``scale`` multiplies the trial counts. Returns ``{name: (passed, total)}``."""
    defaults = {"log-compression-psd": 100, "quadrature-sandwich": 200, "cg-bracket": 20, "gradient-fd": 20}
    report = {}
    for i, (name, check) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, i])
        kwargs = {"trials": max(1, int(round(defaults[name] * scale)))}
        if name == "quadrature-sandwich":
            kwargs["flip_radau"] = flip_radau
        passed, total = check(rng, **kwargs)
        report[name] = (int(passed), int(total))
    return report

