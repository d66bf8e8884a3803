import numpy as np
import pytest

from benard_mix.grid import (
    Grid,
    ModeSpace,
    ScalarField,
    horizontal_derivative,
    inner,
    laplacian,
    sobolev_norm,
    to_physical,
    to_spectral,
    vertical_derivative,
)


def random_field(grid, rng, walls_zero=True):
    values = rng.standard_normal(grid.shape)
    if walls_zero:
        values[0] = values[-1] = 0.0
    return values


class TestGridValidation:
    def test_rejects_fractional_layer(self):
        with pytest.raises(ValueError, match="c \\* n3"):
            Grid(16, 16, 21, c=0.5)

    def test_rejects_odd_horizontal(self):
        with pytest.raises(ValueError, match="n1"):
            Grid(15, 16, 16)

    def test_layer_index(self):
        assert Grid(16, 16, 32, c=0.25).layer_index == 8


class TestNorms:
    def test_norm_of_one(self):
        g = Grid(16, 16, 16)
        one = np.ones(g.shape)
        assert sobolev_norm(one, 0, g) == pytest.approx(2 * np.pi, rel=1e-14)

    def test_sine_norm(self):
        g = Grid(8, 8, 64)
        f = g.field(lambda x1, x2, x3: np.sin(np.pi * x3))
        assert sobolev_norm(f) ** 2 == pytest.approx(2 * np.pi**2, abs=1e-6)

    def test_h1_of_constant(self):
        g = Grid(16, 16, 16)
        f = g.field(lambda x1, x2, x3: 3.0 + 0 * x3)
        assert sobolev_norm(f, 1) == pytest.approx(sobolev_norm(f, 0), rel=1e-13)

    def test_parseval(self, rng):
        g = Grid(16, 16, 16)
        v = random_field(g, rng)
        c = to_spectral(v)
        spectral = g.area * np.sum(g.mode_weights * np.abs(c) ** 2, axis=(-2, -1)) @ g.trapezoid
        assert spectral == pytest.approx(inner(v, v, g), rel=1e-10)

    def test_mode_space_matches_physical(self, rng):
        g = Grid(16, 16, 16)
        sp = ModeSpace.full(g)
        X = sp.symmetrize(rng.standard_normal((sp.N, sp.K)) + 1j * rng.standard_normal((sp.N, sp.K)))
        X[:, 0] = X[:, 0].real
        v = sp.embed(X)
        assert float(sp.norm(X)) == pytest.approx(float(sobolev_norm(v, 0, g)), rel=1e-12)
        assert float(sp.h1_norm(X)) == pytest.approx(float(sobolev_norm(v, 1, g)), rel=1e-12)


class TestTransforms:
    @pytest.mark.parametrize("shape", [(8, 8, 4), (16, 12, 16), (32, 32, 32)])
    def test_round_trip(self, shape, rng):
        g = Grid(*shape)
        v = random_field(g, rng, walls_zero=False)
        back = to_physical(to_spectral(v), g)
        assert np.max(np.abs(back - v)) <= 1e-12 * np.max(np.abs(v))

    def test_mode_space_round_trip(self, rng):
        g = Grid(16, 16, 16)
        sp = ModeSpace(g)
        X = rng.standard_normal((sp.N, sp.K)) + 1j * rng.standard_normal((sp.N, sp.K))
        X = sp.symmetrize(X)
        X[:, 0] = X[:, 0].real
        assert np.max(np.abs(sp.restrict(sp.embed(X)) - X)) < 1e-13

    def test_real_field_symmetry_preserved(self, rng):
        g = Grid(16, 16, 16)
        v = random_field(g, rng)
        d = horizontal_derivative(v, g, 1)
        assert np.isrealobj(d)
        lap = laplacian(v, g)
        assert np.isrealobj(lap)


class TestDerivatives:
    def test_horizontal_derivative_of_mode(self):
        g = Grid(16, 16, 8)
        f = g.field(lambda x1, x2, x3: np.sin(3 * x1) * np.cos(2 * x2) + 0 * x3)
        d1 = horizontal_derivative(f.values, g, 1)
        x1, x2, x3 = g.mesh()
        expected = np.broadcast_to(3 * np.cos(3 * x1) * np.cos(2 * x2), g.shape)
        assert np.max(np.abs(d1 - expected)) < 1e-12

    def test_constants_have_zero_derivatives(self):
        g = Grid(16, 16, 16)
        c = np.full(g.shape, 2.5)
        assert np.max(np.abs(horizontal_derivative(c, g, 1))) == 0.0
        assert np.max(np.abs(horizontal_derivative(c, g, 2))) == 0.0
        assert np.max(np.abs(vertical_derivative(c, g.h))) == 0.0

    def test_linearity(self, rng):
        g = Grid(16, 16, 16)
        a, b = random_field(g, rng), random_field(g, rng)
        lhs = laplacian(2 * a - 3 * b, g)
        rhs = 2 * laplacian(a, g) - 3 * laplacian(b, g)
        assert np.max(np.abs(lhs - rhs)) < 1e-9 * np.max(np.abs(lhs))

    def test_vertical_derivative_second_order(self):
        errors = []
        for n in (16, 32, 64):
            g = Grid(8, 8, n)
            f = g.field(lambda x1, x2, x3: np.sin(2.0 * x3) + 0 * x1)
            d = vertical_derivative(f.values, g.h)
            exact = np.broadcast_to(2 * np.cos(2.0 * g.x3)[:, None, None], g.shape)
            errors.append(np.max(np.abs(d - exact)))
        rates = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
        assert np.all(rates > 1.9)

    def test_field_shape_check(self):
        g = Grid(16, 16, 16)
        with pytest.raises(ValueError, match="does not match"):
            ScalarField(g, np.zeros((3, 3, 3)))
