"""Adam, the block-update training loop and posterior-mean prediction."""
import numpy as np
import pytest

from bbgp.data import normalize, split, synth_gp
from bbgp.errors import LengthMismatch, NotConvergedWarning
from bbgp.kernel import LOG_2PI, Hyperparameters, cross_covariance, exact_lml, kernel_matrix
from bbgp.linalg import sym_logm
from bbgp.objective import BBGPConfig, rademacher_probes
from bbgp.training import AdamState, adam_step, fit, fit_exact, predict_mean, rmse


class TestAdam:
    def test_zero_gradient(self):
        state, p = adam_step(AdamState(), np.array([1.0, -2.0]), np.zeros(2))
        np.testing.assert_array_equal(p, [1.0, -2.0])
        assert state.step == 1

    def test_first_step(self):
        g = np.array([3.0, -0.5, 1e-3])
        _, p = adam_step(AdamState(lr=0.1), np.zeros(3), g)
        np.testing.assert_allclose(p, 0.1 * np.sign(g), rtol=1e-4)

    def test_constant_gradient(self):
        g = np.array([2.0, -1.0])
        s1, p1 = adam_step(AdamState(), np.zeros(2), g)
        _, p2 = adam_step(s1, p1, g)
        assert np.all(np.abs(p2 - p1) <= np.abs(p1) + 1e-9)

    def test_ascends_quadratic(self):
        state, p = AdamState(lr=0.05), np.array([3.0, -2.0])
        for _ in range(500):
            state, p = adam_step(state, p, -2 * p)
        assert np.linalg.norm(p) < 0.1

    def test_inputs_untouched(self):
        state, p = adam_step(AdamState(), np.zeros(2), np.ones(2))
        m = state.m.copy()
        adam_step(state, p, np.ones(2))
        np.testing.assert_array_equal(state.m, m)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState(), np.zeros(2), np.zeros(3))


class TestRMSE:
    def test_zero(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_arithmetic(self):
        assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(np.sqrt(12.5))
        assert rmse([3.0, 4.0], [0.0, 0.0]) == pytest.approx(3.5355, abs=1e-4)

    def test_shift_invariant(self):
        a, b = np.array([1.0, 5.0, 2.0]), np.array([0.5, 4.0, 3.0])
        assert rmse(a + 7, b + 7) == pytest.approx(rmse(a, b), rel=1e-12)

    def test_mismatch(self):
        with pytest.raises(LengthMismatch):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(LengthMismatch):
            rmse([], [])


class TestPredict:
    def test_interpolation(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(size=(20, 2))
        y = np.sin(4 * X[:, 0]) + X[:, 1]
        hp = Hyperparameters([0.5, 0.5], 1.0, 1e-6)
        pred = predict_mean(X, y, X[:3], hp, tol=1e-10, precond_rank=20)
        np.testing.assert_allclose(pred, y[:3], atol=1e-2)

    def test_far_point_reverts_to_mean(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(size=(15, 1))
        hp = Hyperparameters([0.1], 1.0, 0.1, 0.7)
        pred = predict_mean(X, rng.standard_normal(15), np.array([[1e3]]), hp)
        assert pred[0] == pytest.approx(0.7, abs=1e-12)

    @pytest.mark.parametrize("precond_rank", [0, 100])
    def test_matches_dense(self, precond_rank):
        rng = np.random.default_rng(2)
        X = rng.uniform(size=(64, 2))
        Xs = rng.uniform(size=(10, 2))
        y = rng.standard_normal(64)
        hp = Hyperparameters([0.4, 0.6], 1.2, 0.05, 0.2)
        ref = hp.mean + cross_covariance(Xs, X, hp) @ np.linalg.solve(kernel_matrix(X, hp), y - hp.mean)
        pred = predict_mean(X, y, Xs, hp, precond_rank=precond_rank, tol=1e-10)
        np.testing.assert_allclose(pred, ref, atol=1e-5)

    def test_warns_when_capped(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(30, 2))
        hp = Hyperparameters([0.4, 0.6], 1.0, 1e-3)
        with pytest.warns(NotConvergedWarning):
            predict_mean(X, rng.standard_normal(30), X[:2], hp, precond_rank=0, max_iters=2)

    def test_bad_tol(self):
        with pytest.raises(ValueError):
            predict_mean(np.zeros((2, 1)), np.zeros(2), np.zeros((1, 1)), Hyperparameters.initial(1), tol=0)


def small_problem(seed=0, n=96):
    truth = Hyperparameters([0.25, 0.25], 1.0, 0.1)
    ds = normalize(split(synth_gp(n, 2, truth, seed=seed), seed))
    return ds


class TestFit:
    def test_zero_steps(self):
        ds = small_problem()
        X, y = ds.train()
        hp, trace = fit(X, y, steps=0)
        assert hp == Hyperparameters.initial(2)
        assert len(trace) == 0

    def test_trace_schema(self):
        ds = small_problem()
        X, y = ds.train()
        seen = []
        hp, trace = fit(X, y, BBGPConfig(seed=1), steps=12, eval_every=5,
                        eval_hook=lambda h: seen.append(h) or 0.5)
        assert len(trace) == 12
        assert [r.step for r in trace] == list(range(12))
        assert [r.rmse is not None for r in trace] == [i in (4, 9, 11) for i in range(12)]
        assert seen[-1] == hp == trace.records[-1].hp
        for a, b in zip(trace.records, trace.records[1:]):
            assert b.hp_evaluated == a.hp
        assert trace.total_iterations == sum(r.iters for r in trace)

    def test_reproducible(self):
        ds = small_problem()
        X, y = ds.train()
        hp1, t1 = fit(X, y, BBGPConfig(seed=2), steps=15)
        hp2, t2 = fit(X, y, BBGPConfig(seed=2), steps=15)
        np.testing.assert_array_equal(hp1.to_unconstrained(), hp2.to_unconstrained())
        assert [r.objective for r in t1] == [r.objective for r in t2]
        assert [r.iters for r in t1] == [r.iters for r in t2]

    def test_improves_likelihood(self):
        ds = small_problem()
        X, y = ds.train()
        hp, _ = fit(X, y, steps=60)
        assert exact_lml(X, y, hp) > exact_lml(X, y, Hyperparameters.initial(2))

    def test_warm_start_benefit(self):
        violations = 0
        for seed in range(5):
            ds = small_problem(seed, n=192)
            X, y = ds.train()
            cfg = BBGPConfig(epsilon=0.1, seed=seed)
            _, warm = fit(X, y, cfg, steps=50)
            _, cold = fit(X, y, cfg, steps=50, warm_start=False)
            violations += sum(r.cg_iters for r in warm) > sum(r.cg_iters for r in cold)
        assert violations <= 1

    def _probe_target(self, X, y, hp, seed, step):
        z = rademacher_probes(len(y), 1, seed, step)[0]
        K = kernel_matrix(X, hp)
        r = y - hp.mean
        return -0.5 * len(y) * LOG_2PI - 0.5 * z @ sym_logm(K) @ z - 0.5 * r @ np.linalg.solve(K, r)

    def test_trace_below_exact(self):
        # records store -L; the stochastic objective should sit below the exact LML
        ds = small_problem(1, n=192)
        X, y = ds.train()
        _, trace = fit(X, y, BBGPConfig(seed=1), steps=30)
        above = [r.step for r in trace if -r.objective > exact_lml(X, y, r.hp_evaluated) + 1e-6]
        assert not above, f"objective above exact LML at steps {above}"

    def test_trace_below_probe_target(self):
        ds = small_problem(1, n=192)
        X, y = ds.train()
        _, trace = fit(X, y, BBGPConfig(seed=1), steps=30)
        for r in trace:
            assert -r.objective <= self._probe_target(X, y, r.hp_evaluated, 1, r.step) + 1e-6

    def test_recovers_noise(self):
        ratios = []
        for seed in range(5):
            truth = Hyperparameters([0.25, 0.25], 1.0, 0.1)
            ds = normalize(split(synth_gp(256, 2, truth, seed=seed), seed))
            X, y = ds.train()
            hp, _ = fit(X, y, BBGPConfig(seed=seed), steps=200)
            ratios.append(hp.noise_variance * ds.y_std**2 / 0.1)
        assert 0.5 <= np.median(ratios) <= 2.0, ratios


def test_fit_exact_increases_lml():
    ds = small_problem()
    X, y = ds.train()
    hp, values = fit_exact(X, y, steps=40)
    assert values[-1] > values[0]
    assert exact_lml(X, y, hp) > values[0]
