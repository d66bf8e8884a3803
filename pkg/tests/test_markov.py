import numpy as np
import pytest

from benard_mix.control import random_deviation
from benard_mix.markov import (
    ChainModel,
    ObservableDictionary,
    calibrate_ball,
    dissipativity_experiment,
    estimate_dual_lipschitz,
    fit_decay_rate,
    mixing_experiment,
    ordered_sum,
    run_ensemble,
)
from benard_mix.thermal import StepperConfig


@pytest.fixture(scope="module")
def model(small_grid, small_noise):
    config, basis = small_noise
    return ChainModel(small_grid, StepperConfig(dt=1.0 / 64), config, basis)


class TestEstimators:
    def test_permutation_invariant(self, rng):
        A = rng.uniform(-1, 1, (64, 5))
        B = rng.uniform(-1, 1, (64, 5))
        ref = estimate_dual_lipschitz(A, B)
        for _ in range(5):
            assert estimate_dual_lipschitz(A[rng.permutation(64)], B[rng.permutation(64)]) == ref

    def test_ordered_sum(self, rng):
        x = rng.standard_normal(1000)
        assert ordered_sum(x) == ordered_sum(x[::-1])

    def test_identical_ensembles(self, rng):
        A = rng.uniform(-1, 1, (16, 4))
        assert estimate_dual_lipschitz(A, A.copy()) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            estimate_dual_lipschitz(np.zeros((0, 3)), np.zeros((2, 3)))

    def test_observables_bounded_lipschitz(self, small_space, rng):
        obs = ObservableDictionary(small_space, 8, seed=1)
        S = random_deviation(small_space, 3.0, rng)
        T = random_deviation(small_space, 3.0, rng)
        fs, ft = obs(S), obs(T)
        assert np.all(np.abs(fs) <= 1.0)
        assert np.max(np.abs(fs - ft)) <= float(small_space.h1_norm(S - T))

    def test_observables_batched(self, small_space, rng):
        obs = ObservableDictionary(small_space, 4, seed=1)
        S = np.stack([random_deviation(small_space, 1.0, rng) for _ in range(3)], axis=1)
        batched = obs(S)
        assert batched.shape == (3, 4)
        assert np.allclose(batched[2], obs(S[:, 2]))


class TestFits:
    def test_exact_exponential(self):
        k = np.arange(30)
        fit = fit_decay_rate(2.5 * np.exp(-0.3 * k), (5, 25))
        assert fit.gamma == pytest.approx(0.3, abs=1e-12)
        assert fit.C == pytest.approx(2.5, rel=1e-10)
        assert fit.r2 == pytest.approx(1.0)
        assert fit.steps[0] == 5 and fit.steps[-1] == 25

    def test_excludes_nonpositive(self):
        d = np.exp(-0.5 * np.arange(10))
        d[4] = 0.0
        fit = fit_decay_rate(d)
        assert fit.excluded == [4]
        assert fit.gamma == pytest.approx(0.5)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            fit_decay_rate(np.zeros(5))


class TestChains:
    def test_noise_keyed_by_chain(self, model):
        a = model.xi([0, 3], 2)
        b = model.xi([3], 2)
        assert np.array_equal(a[1], b[0])
        assert not np.array_equal(model.xi([3], 1), b)

    def test_ensemble_deterministic_across_workers(self, model, small_space):
        obs = ObservableDictionary(small_space, 4)
        S0 = random_deviation(small_space, 0.1, np.random.default_rng(0))
        one = run_ensemble(model, S0, 6, 2, obs, workers=1)
        two = run_ensemble(model, S0, 6, 2, obs, workers=2)
        assert np.array_equal(one.values, two.values)
        assert np.array_equal(one.final, two.final)

    def test_zero_amplitude_deterministic(self, small_grid, small_noise):
        config, basis = small_noise
        from dataclasses import replace

        m = ChainModel(small_grid, StepperConfig(dt=1.0 / 64), replace(config, a=0.0), basis)
        assert m.forcing([0], 1) is None
        S = m.advance(m.space.zeros((1,)), [0], 1)
        assert np.max(np.abs(S)) <= 1e-12

    def test_mixing_decays(self, model, small_space):
        obs = ObservableDictionary(small_space, 8)
        S_b = random_deviation(small_space, 0.3, np.random.default_rng(9))
        rep = mixing_experiment(model, small_space.zeros(), S_b, 8, 8, obs, window=(1, 8), workers=1)
        assert rep.gamma > 0
        assert rep.coupling_fit.gamma > 0
        assert len(rep.distances) == 9

    def test_dissipativity(self, model):
        ball = calibrate_ball(model, burn_in=3, n_chains=2)
        rep = dissipativity_experiment(model, [1.0, 5.0], ball=ball, budget=20)
        assert all(t is not None for t in rep.entry_times)
        assert rep.entry_times[0] <= rep.entry_times[1]
