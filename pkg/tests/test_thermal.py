import numpy as np
import pytest

from benard_mix.control import random_deviation
from benard_mix.grid import Grid, ModeSpace, ScalarField, VectorField
from benard_mix.noise import sample_noise
from benard_mix.thermal import (
    CFLViolation,
    StepperConfig,
    ThermalStepper,
    advect,
    energy_monitor,
    integrate_unit_interval,
    step,
)


def single_mode(grid, k1=1, j=1):
    return grid.field(lambda x1, x2, x3: np.sin(np.pi * j * x3) * np.cos(k1 * x1))


class TestConduction:
    def test_fixed_point_full_fields(self):
        g = Grid(16, 16, 16)
        T = g.conduction(1.0, 0.0)
        Tbar = T.values.copy()
        prev = None
        for _ in range(100):
            T, prev = step(T, None, 1.0 / 64, Ra=1600.0, previous=prev)
        assert np.max(np.abs(T.values - Tbar)) <= 1e-10

    def test_fixed_point_unit_interval(self, small_grid):
        T1, _ = integrate_unit_interval(small_grid.conduction(1.0, 0.0), config=StepperConfig(dt=1.0 / 64))
        assert np.max(np.abs(T1.values - small_grid.conduction(1.0, 0.0).values)) <= 1e-10

    def test_walls_held(self, small_grid, rng):
        st = ThermalStepper(small_grid, StepperConfig(dt=1.0 / 64, Ra=100.0, T_b=2.0, T_u=0.5))
        S0 = random_deviation(st.space, 0.5, rng)
        S1, _ = st.run(S0)
        T1 = st.to_field(S1)
        assert np.all(T1.values[0] == 2.0) and np.all(T1.values[-1] == 0.5)


class TestDiffusion:
    def test_crank_nicolson_factor(self):
        g = Grid(8, 8, 32)
        dt = 1.0 / 64
        st = ThermalStepper(g, StepperConfig(dt=dt, Ra=0.0))
        S = st.space.restrict(single_mode(g).values)
        S1 = st.cn_solve(S, np.zeros_like(S))
        mu = -(4.0 / g.h**2) * np.sin(0.5 * np.pi * g.h) ** 2 - 1.0
        factor = (1 + 0.5 * dt * mu) / (1 - 0.5 * dt * mu)
        assert np.max(np.abs(S1 - factor * S)) <= 1e-10 * np.max(np.abs(S))

    def test_decay_rate_recovers_pi_squared(self):
        g = Grid(8, 8, 64)
        st = ThermalStepper(g, StepperConfig(dt=1.0 / 256, Ra=0.0))
        S0 = st.space.restrict(g.field(lambda x1, x2, x3: np.sin(np.pi * x3) + 0 * x1).values)
        S1, _ = st.run(S0)
        rate = -np.log(np.max(np.abs(S1)) / np.max(np.abs(S0)))
        assert abs(rate - np.pi**2) <= 0.01 * np.pi**2


class TestTransport:
    def test_energy_neutral(self, small_stepper, rng):
        st = small_stepper
        S = random_deviation(st.space, 1.0, rng)
        u = st.stokes.velocity(S)
        N, _ = st.transport(u, S)
        assert abs(st.space.inner(S, N)) <= 1e-10 * st.space.norm(S) * st.space.norm(N)

    def test_advect_uniform_flow(self):
        g = Grid(16, 16, 16)
        T = single_mode(g, k1=2)
        ones = np.ones(g.shape)
        u = VectorField(g, ones, 0 * ones, 0 * ones)
        out = advect(u, T)
        x1, _, x3 = g.mesh()
        expected = -2 * np.sin(2 * x1) * np.sin(np.pi * x3)
        assert np.max(np.abs(out.values[1:-1] - expected[1:-1])) < 1e-10

    def test_advect_profile_term(self):
        g = Grid(8, 8, 8)
        T = g.conduction(1.0, 0.0)
        u3 = g.field(lambda x1, x2, x3: np.sin(np.pi * x3) * np.cos(x1)).values
        u = VectorField(g, 0 * u3, 0 * u3, u3)
        out = advect(u, T)
        assert np.max(np.abs(out.values[1:-1] + u3[1:-1])) < 1e-12


class TestTimeAccuracy:
    def test_richardson_ratio_noisy(self, small_grid, small_noise):
        config, basis = small_noise
        space = ModeSpace(small_grid)
        S0 = random_deviation(space, 0.2, np.random.default_rng(3))
        forcing = sample_noise(1, config, basis).forcing(space)
        finals = []
        for n in (32, 64, 128):
            st = ThermalStepper(small_grid, StepperConfig(dt=1.0 / n), space)
            finals.append(st.run(S0, forcing)[0])
        ratio = space.norm(finals[0] - finals[1]) / space.norm(finals[1] - finals[2])
        assert 3.5 <= ratio <= 4.5

    def test_cfl_violation(self, small_grid, rng):
        st = ThermalStepper(small_grid, StepperConfig(dt=1.0 / 16, Ra=1e5))
        S0 = random_deviation(st.space, 5.0, rng)
        with pytest.raises(CFLViolation) as info:
            st.run(S0)
        assert info.value.cfl > info.value.limit

    def test_batched_matches_single(self, small_stepper, rng):
        st = small_stepper
        S = np.stack([random_deviation(st.space, 0.3, rng) for _ in range(3)], axis=1)
        batch, _ = st.run(S)
        single, _ = st.run(S[:, 1])
        assert np.max(np.abs(batch[:, 1] - single)) < 1e-13

    def test_record_and_monitor(self, small_grid, small_stepper, rng):
        T0 = small_stepper.to_field(random_deviation(small_stepper.space, 0.3, rng))
        T1, traj = integrate_unit_interval(T0, stepper=small_stepper, record=True)
        assert len(traj) == 65
        assert np.allclose(traj.temperature(64).values, T1.values)
        mon = energy_monitor(traj)
        assert mon["time"][0] == 0.0 and mon["time"][-1] == 1.0
        assert np.all(np.isfinite(mon["T_H3"]))


class TestConfig:
    def test_dt_must_divide_one(self):
        with pytest.raises(ValueError, match="divide"):
            StepperConfig(dt=0.3)

    def test_negative_ra(self):
        with pytest.raises(ValueError):
            StepperConfig(Ra=-1.0)
