import numpy as np
import pytest
from scipy import stats

from benard_mix.grid import Grid, ModeSpace, sobolev_norm
from benard_mix.noise import (
    NoiseConfig,
    RankDeficiencyError,
    build_basis,
    gram_residual,
    sample_noise,
    sample_xi,
    xi_cdf,
    xi_stream,
)

XI_VAR = 1.0 / 7.0


@pytest.fixture(scope="module")
def tiny():
    config = NoiseConfig(a=2.0, m=16, n_substeps=16)
    return config, build_basis(config, Grid(8, 8, 8))


class TestBasis:
    def test_orthonormal_separable(self, small_noise):
        _, basis = small_noise
        assert gram_residual(basis) < 1e-10

    def test_orthonormal_full_quadrature(self, tiny):
        assert gram_residual(tiny[1], full_quadrature=True) < 1e-10

    def test_zero_above_layer(self, small_noise):
        _, basis = small_noise
        g = basis.grid
        top = np.arange(g.n3 + 1) >= g.layer_index
        for j in range(basis.m):
            for t in (0.0, 0.37, 1.0):
                assert np.all(basis.element(j, t).values[top] == 0.0)

    def test_triangular_span(self, tiny):
        _, basis = tiny
        assert np.all(np.triu(basis.factor, 1) == 0.0)

    def test_rank_deficiency_names_element(self):
        with pytest.raises(RankDeficiencyError) as info:
            build_basis(NoiseConfig(m=16, c=0.25, n_substeps=16), Grid(8, 8, 8, c=0.25))
        assert info.value.index >= 1
        assert str(info.value.index) in str(info.value)

    def test_c_must_match_grid(self):
        with pytest.raises(ValueError, match="differs"):
            build_basis(NoiseConfig(m=4, c=0.25), Grid(8, 8, 8))

    def test_config_rejects_bad_values(self):
        with pytest.raises(ValueError) as info:
            NoiseConfig(a=-1.0, m=0)
        assert "noise.a" in str(info.value) and "noise.m" in str(info.value)

    def test_decay_weights(self):
        assert np.allclose(NoiseConfig(m=4, s=2.0, b0=3.0).b, 3.0 / np.arange(1, 5) ** 2)


class TestLaw:
    def test_moments(self):
        x = sample_xi(np.random.default_rng(2), 1_000_000)
        se_mean = np.sqrt(XI_VAR / x.size)
        assert abs(x.mean()) <= 3 * se_mean
        var_of_sq = 1.0 / 21.0 - 1.0 / 49.0
        assert abs(np.mean(x**2) - XI_VAR) <= 3 * np.sqrt(var_of_sq / x.size)

    def test_ks(self):
        x = sample_xi(np.random.default_rng(4), 100_000)
        assert stats.kstest(x, xi_cdf).statistic <= 0.01

    def test_support_and_cdf(self):
        x = sample_xi(np.random.default_rng(5), 10_000)
        assert np.all(np.abs(x) <= 1.0)
        assert xi_cdf(-1.0) == 0.0 and xi_cdf(1.0) == 1.0 and xi_cdf(0.0) == 0.5

    def test_stream_is_pure_function(self):
        a = xi_stream(3, 1, 7).random(4)
        b = xi_stream(3, 1, 7).random(4)
        c = xi_stream(3, 2, 7).random(4)
        assert np.array_equal(a, b) and not np.array_equal(a, c)


class TestSamples:
    def test_bounded_by_basis_constant(self, tiny):
        config, basis = tiny
        g = basis.grid
        for k in range(5):
            eta = sample_noise(k, config, basis)
            worst = max(sobolev_norm(eta.evaluate(t).values, 0, g) for t in basis.times)
            assert worst <= config.a * basis.c_basis * (1 + 1e-12)

    def test_forcing_matches_evaluate(self, tiny):
        config, basis = tiny
        g = basis.grid
        sp = ModeSpace(g)
        eta = sample_noise(2, config, basis)
        f = eta.forcing(sp)(0.3)
        assert np.max(np.abs(f - sp.restrict(eta.evaluate(0.3).values))) < 1e-12

    def test_zero_amplitude(self, tiny):
        _, basis = tiny
        eta = sample_noise(0, NoiseConfig(a=0.0, m=16, n_substeps=16), basis)
        assert np.all(eta.coefficients == 0.0)
