"""Hyperparameter learning by block updates, plus posterior-mean prediction."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, NotConvergedWarning
from .kernel import Hyperparameters, cross_covariance, exact_lml, exact_lml_grad, kernel_matrix
from .krylov import conjugate_gradient
from .linalg import pivoted_cholesky
from .objective import BBGPConfig, estimate_lml


@dataclass
class AdamState:
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state, params, grad):
    """One bias-corrected Adam step that *increases* the objective.

    Returns a new ``(AdamState, params)`` pair; inputs are not modified.
    """
    grad = np.asarray(grad, dtype=float)
    params = np.asarray(params, dtype=float)
    if params.shape != grad.shape:
        raise ValueError("params and grad must have the same shape")
    m = np.zeros_like(grad) if state.m is None else state.m
    v = np.zeros_like(grad) if state.v is None else state.v
    t = state.step + 1
    m = state.beta1 * m + (1.0 - state.beta1) * grad
    v = state.beta2 * v + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params + state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, m, v)
    return new_state, new_params


@dataclass
class StepRecord:
    step: int
    objective: float  # negative LML estimate at hp_evaluated
    bias_bound: float
    iters: int
    lanczos_t: list
    converged: bool
    hp_evaluated: Hyperparameters
    hp: Hyperparameters  # after this step's update
    cg_iters: int = 0
    rmse: float | None = None
    wall_ms: int = 0


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def total_iterations(self):
        return sum(r.iters for r in self.records)


def rmse(pred, truth):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"prediction length {pred.shape} != truth length {truth.shape}")
    if pred.size == 0:
        raise LengthMismatch("empty inputs")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def predict_mean(X_train, y_train, X_test, hp, tol=1e-6, precond_rank=100, max_iters=None):
    """Posterior mean mu0 + K_*^T alpha with K alpha = y - mu0 solved by preconditioned CG.

    Warns with :class:`NotConvergedWarning` (and returns the best iterate) if
    the relative residual does not reach ``tol``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    y_train = np.asarray(y_train, dtype=float)
    K = kernel_matrix(X_train, hp)
    factor = None
    if precond_rank > 0:
        Kf = K - hp.noise_variance * np.eye(len(y_train))
        factor = pivoted_cholesky(Kf, precond_rank, residual_tol=1e-10 * hp.signal_variance)
    state, ok = conjugate_gradient(K, y_train - hp.mean, hp.noise_variance, precond=factor, tol=tol,
                                   max_iters=max_iters)
    if not ok:
        warnings.warn(f"posterior-mean CG stopped at relative residual above {tol}", NotConvergedWarning)
    return hp.mean + cross_covariance(X_test, X_train, hp) @ state.v


def fit(X, y, cfg=None, steps=500, lr=0.1, init=None, eval_hook=None, eval_every=10, warm_start=True):
    """Learn hyperparameters by Adam ascent on the bias-certified objective.

    Each step assembles K and the preconditioner, estimates the objective
    (CG warm-started from the previous step's ``v``, fresh probes), and takes
    an Adam step on the unconstrained parameters.

    Parameters
    ----------
    eval_hook : callable, optional
        ``eval_hook(hp) -> float`` (typically test RMSE), called with the
        updated parameters every ``eval_every`` steps and after the last step.

    Returns
    -------
    (Hyperparameters, TrainTrace)
    """
    cfg = BBGPConfig() if cfg is None else cfg
    X = np.atleast_2d(np.asarray(X, dtype=float))
    hp = Hyperparameters.initial(X.shape[1]) if init is None else init
    params = hp.to_unconstrained()
    adam = AdamState(lr=lr)
    trace = TrainTrace()
    v = None
    for step in range(steps):
        start = time.perf_counter()
        est = estimate_lml(X, y, hp, cfg, warm_v=v if warm_start else None, step=step)
        v = est.v
        adam, params = adam_step(adam, params, est.gradient)
        new_hp = Hyperparameters.from_unconstrained(params)
        record = StepRecord(
            step=step,
            objective=-est.value,
            bias_bound=est.bias_bound,
            iters=est.iterations_used,
            lanczos_t=list(est.lanczos_t),
            converged=est.converged,
            hp_evaluated=hp,
            hp=new_hp,
            cg_iters=est.cg_iters,
        )
        if eval_hook is not None and ((step + 1) % eval_every == 0 or step == steps - 1):
            record.rmse = float(eval_hook(new_hp))
        record.wall_ms = int(round(1000 * (time.perf_counter() - start)))
        trace.append(record)
        hp = new_hp
    return hp, trace


def fit_exact(X, y, steps=500, lr=0.1, init=None):
    """Adam ascent on the exact Cholesky LML; the reference for generate-and-recover checks."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    hp = Hyperparameters.initial(X.shape[1]) if init is None else init
    params = hp.to_unconstrained()
    adam = AdamState(lr=lr)
    values = []
    for _ in range(steps):
        values.append(exact_lml(X, y, hp))
        adam, params = adam_step(adam, params, exact_lml_grad(X, y, hp))
        hp = Hyperparameters.from_unconstrained(params)
    return hp, values
