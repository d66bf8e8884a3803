import numpy as np
import pytest

from benard_mix.control import (
    ControlSequence,
    ControlledSystem,
    ProjectionOperator,
    build_chi,
    random_deviation,
    select_l,
    smoothstep,
)
from benard_mix.grid import ScalarField
from benard_mix.stokes import StokesOperator
from benard_mix.thermal import StepperConfig, ThermalStepper


@pytest.fixture(scope="module")
def controlled(small_grid, small_noise):
    _, basis = small_noise
    config = StepperConfig(dt=1.0 / 64)
    target = build_chi(1.0, 0.0, 0.05, 0.45, small_grid)
    return select_l(small_grid, config, basis, target, l_max=8)


class TestProfile:
    def test_smoothstep_endpoints(self):
        z = np.array([0.0, 1.0])
        assert np.array_equal(smoothstep(z), [0.0, 1.0])
        for d in (1, 2):
            assert np.allclose(smoothstep(z, d), 0.0)

    def test_smoothstep_derivative(self):
        z = np.linspace(0.1, 0.9, 9)
        e = 1e-6
        fd = (smoothstep(z + e) - smoothstep(z - e)) / (2 * e)
        assert np.allclose(fd, smoothstep(z, 1), atol=1e-8)

    def test_plateaus_exact(self, small_grid):
        chi = build_chi(1.0, 0.0, 0.1, 0.4, small_grid)
        x3 = small_grid.x3
        assert np.all(chi.chi[x3 <= 0.1] == 1.0) and np.all(chi.chi[x3 >= 0.4] == 0.0)

    def test_chi_drives_no_flow(self, small_grid):
        chi = build_chi(1.0, 0.0, 0.05, 0.45, small_grid)
        T = ScalarField(small_grid, np.broadcast_to(chi.chi[:, None, None], small_grid.shape).copy(), 1.0, 0.0)
        u = StokesOperator(small_grid, 1.0e4).apply_M(T)
        assert u.max_abs() <= 1e-10

    @pytest.mark.parametrize("eps", [(0.3, 0.2), (0.0, 0.2), (0.1, 0.5)])
    def test_bad_edges(self, small_grid, eps):
        with pytest.raises(ValueError, match="eps1"):
            build_chi(1.0, 0.0, *eps, small_grid)


class TestProjection:
    def test_idempotent_on_basis(self, small_space, small_noise, rng):
        _, basis = small_noise
        P = ProjectionOperator(basis, small_space, 6)
        coef = rng.standard_normal(basis.m)
        full = ProjectionOperator(basis, small_space, basis.m)
        vals, ders = full.basis_values(coef)
        assert np.allclose(P.coefficients(vals, ders), coef[:6], atol=1e-10)
        vals6, ders6 = P.basis_values(coef[:6])
        assert np.allclose(P.coefficients(vals6, ders6), coef[:6], atol=1e-10)

    def test_rejects_large_l(self, small_space, small_noise):
        _, basis = small_noise
        with pytest.raises(ValueError, match="exceeds"):
            ProjectionOperator(basis, small_space, basis.m + 1)

    def test_random_deviation_norm(self, small_space, rng):
        X = random_deviation(small_space, 0.7, rng)
        assert abs(float(small_space.h1_norm(X)) - 0.7) < 1e-12
        assert np.allclose(small_space.symmetrize(X), X)


class TestControl:
    def test_periodic_solution_converged(self, controlled):
        system, periodic, tried = controlled
        assert periodic.converged and periodic.residual <= 1e-8
        assert tried[-1]["l"] == system.l

    def test_contraction(self, controlled, rng):
        system, periodic, _ = controlled
        for _ in range(3):
            S0 = periodic.start + system._chi_dev + random_deviation(system.space, 0.05, rng)
            ratio, details = system.verify_property_C(S0, 8, periodic)
            assert ratio <= 0.5
            assert details["consistency"] <= 1e-6
            assert details["controls"].admissible_amplitude(system.basis.config.b) > 0

    def test_admissible_amplitude(self):
        seq = ControlSequence([np.array([0.5, -2.0]), np.array([1.0, 0.1])], 2)
        assert seq.admissible_amplitude(np.array([1.0, 0.5])) == 4.0
        assert ControlSequence([], 0).admissible_amplitude(np.ones(1)) == 0.0
