import numpy as np
import pytest

from benard_mix.grid import Grid, ModeSpace, ScalarField, VectorField, inner, sobolev_norm
from benard_mix.stokes import ModeSolver, SpectralStokes, StokesOperator, dense_primitive_solve, divergence


def random_interior(grid, rng, batch=()):
    v = rng.standard_normal(tuple(batch) + grid.shape)
    v[..., 0, :, :] = 0.0
    v[..., -1, :, :] = 0.0
    return v


@pytest.fixture(scope="module")
def op():
    return StokesOperator(Grid(16, 16, 16), 1.0e4)


class TestDenseOracle:
    def test_matches_primitive_variable_solve(self, op, rng):
        g, sp = op.grid, op.space
        X = sp.restrict(random_interior(g, rng, (5,)))
        u = op.fast.velocity(X)
        for i in range(sp.K):
            k1, k2 = sp.k1[i], sp.k2[i]
            if k1 == 0 and k2 == 0:
                continue
            dense = dense_primitive_solve((k1, k2), X[:, :, i], g.n3, op.Ra)
            for d, c in zip(dense, u):
                assert np.max(np.abs(d - c[:, :, i])) <= 1e-9 * max(np.max(np.abs(d)), 1e-300)

    def test_band_solver_agrees_with_spectral(self, op, rng):
        sp = op.space
        X = sp.restrict(random_interior(op.grid, rng))
        w = op.fast.solve(X)
        i = 7
        solver = ModeSolver(sp.ksq[i], op.grid.n3, op.grid.h)
        assert np.max(np.abs(solver.solve(X[:, i]) - w[:, i])) < 1e-12 * np.max(np.abs(w[:, i]))


class TestStructure:
    def test_horizontally_uniform_temperature_drives_no_flow(self, op, rng):
        g = op.grid
        for _ in range(10):
            profile = rng.standard_normal(g.n3 + 1)
            T = ScalarField(g, np.broadcast_to(profile[:, None, None], g.shape).copy(), profile[0], profile[-1])
            u = op.apply_M(T)
            assert u.max_abs() <= 1e-10 * np.max(np.abs(profile))

    def test_adjointness(self, op, rng):
        g = op.grid
        worst = 0.0
        for _ in range(100):
            T = random_interior(g, rng)
            f = VectorField(g, *(random_interior(g, rng) for _ in range(3)))
            u = op.apply_M(T)
            lhs = sum(inner(a, b, g) for a, b in zip(u.components, f.components))
            rhs = inner(T, op.apply_M_star(f).values, g)
            fn = np.sqrt(sum(inner(c, c, g) for c in f.components))
            worst = max(worst, abs(lhs - rhs) / (sobolev_norm(T, 0, g) * fn))
        assert worst <= 1e-10

    def test_walls_no_slip(self, op, rng):
        u = op.apply_M(random_interior(op.grid, rng))
        for c in u.components:
            assert np.all(c[0] == 0.0) and np.all(c[-1] == 0.0)

    def test_interior_divergence_free(self, op, rng):
        g = op.grid
        T = g.field(lambda x1, x2, x3: np.sin(np.pi * x3) * np.cos(x1 + 2 * x2))
        u = op.apply_M(T)
        div = divergence(u).values
        scale = np.max(np.abs(u.u3)) / g.h
        assert np.max(np.abs(div[1:-1])) < 1e-10 * scale

    def test_linear_in_ra(self, rng):
        g = Grid(16, 16, 16)
        sp = ModeSpace(g)
        X = sp.restrict(random_interior(g, rng))
        a = SpectralStokes(sp, 1.0).vertical_velocity(X)
        b = SpectralStokes(sp, 250.0).vertical_velocity(X)
        assert np.max(np.abs(b - 250.0 * a)) < 1e-12 * np.max(np.abs(b))

    def test_operator_symmetric_positive_definite(self):
        s = ModeSolver(5.0, 16, 1.0 / 16)
        A = s.matrix
        assert np.allclose(A, A.T)
        assert np.min(np.linalg.eigvalsh(A)) > 0

    def test_field_shape_error(self, op):
        with pytest.raises(ValueError, match="does not match"):
            op.apply_M(np.zeros((4, 4, 4)))
