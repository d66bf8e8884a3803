"""Stationary Stokes solves for the infinite-Prandtl velocity.

For a temperature ``T`` the velocity ``u = M(T)`` solves
``-lap u + grad p = Ra T e3``, ``div u = 0`` with ``u = 0`` on both walls.
Pressure is eliminated: per horizontal wavenumber ``k != 0`` the vertical
velocity solves the clamped biharmonic problem

    (D^2 - |k|^2)^2 w = Ra |k|^2 T_k,   w = Dw = 0 at x3 in {0, 1},

and the horizontal velocity is ``u_h = (i k / |k|^2) Dw`` (buoyancy is
vertical, so the vertical vorticity vanishes).  The ``k = 0`` mode carries
no velocity.  Discretely ``D^2`` is the three-point stencil and the clamped
condition uses the mirror ghost point ``w_{-1} = w_1``, which keeps the
per-mode operator symmetric positive definite; ``M*`` below is then the
exact transpose of ``M`` in the trapezoidal inner product.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

from .grid import Grid, ModeSpace, ScalarField, VectorField, to_physical, to_spectral, vertical_derivative

__all__ = [
    "ModeSolver",
    "SpectralStokes",
    "StokesOperator",
    "divergence",
    "centered_matrix",
    "dense_primitive_solve",
]


def _second_difference(n_int: int, h: float) -> np.ndarray:
    return (np.diag(np.full(n_int, -2.0)) + np.diag(np.ones(n_int - 1), 1) + np.diag(np.ones(n_int - 1), -1)) / h**2


def centered_matrix(n_int: int, h: float) -> np.ndarray:
    """Centred first derivative on interior planes with zero wall values.

    Antisymmetric, which is what makes ``M*`` the transpose of ``M``.
    """
    return (np.diag(np.ones(n_int - 1), 1) - np.diag(np.ones(n_int - 1), -1)) / (2 * h)


class ModeSolver:
    """Factorised clamped biharmonic operator for one wavenumber modulus."""

    def __init__(self, ksq: float, n3: int, h: float, Ra: float = 1.0):
        self.ksq = float(ksq)
        self.Ra = float(Ra)
        self.n = n3 - 1
        if self.n < 3:
            raise ValueError("need n3 >= 4 for the clamped biharmonic stencil")
        L = _second_difference(self.n, h) - self.ksq * np.eye(self.n)
        A = L @ L
        A[0, 0] += 2.0 / h**4
        A[-1, -1] += 2.0 / h**4
        self.matrix = A
        # upper banded storage, bandwidth 2
        ab = np.zeros((3, self.n))
        for d in range(3):
            ab[2 - d, d:] = np.diagonal(A, d)
        self._chol = scipy.linalg.cholesky_banded(ab)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``A w = rhs`` for interior values (axis 0)."""
        return scipy.linalg.cho_solve_banded((self._chol, False), rhs)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))

    def residual(self, w: np.ndarray, rhs: np.ndarray) -> float:
        r = self.matrix @ w - rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))


class SpectralStokes:
    """Stokes solves on a :class:`ModeSpace` via sine transforms.

    ``(D^2 - k^2)^2`` with Dirichlet ``D^2`` is diagonal in the sine basis;
    the clamped ghost-point correction adds ``2/h^4`` on the two corner
    entries, a rank-two update handled with the Woodbury identity.  The
    result agrees with :class:`ModeSolver` to round-off and costs two
    vertical matrix products per batch.
    """

    def __init__(self, space: ModeSpace, Ra: float):
        self.space = space
        self.Ra = float(Ra)
        mu = space.lam[:, None] - space.ksq[None, :]  # (N, K)
        self._inv_mu2 = 1.0 / mu**2
        Q = space.Q
        h4 = space.grid.h**4
        # B^-1 e_1 and B^-1 e_N for every mode: (N, 2, K)
        ends = Q[:, [0, -1]]
        P = np.einsum("ij,jk,jb->ibk", Q, self._inv_mu2, ends)
        self._P = P
        C = np.empty((space.K, 2, 2))
        C[:, 0, 0] = P[0, 0]
        C[:, 0, 1] = P[0, 1]
        C[:, 1, 0] = P[-1, 0]
        C[:, 1, 1] = P[-1, 1]
        C += 0.5 * h4 * np.eye(2)
        # (I h^4/2 + U^T B^-1 U)^-1, stored (2, 2, K)
        self._Cinv = np.linalg.inv(C).transpose(1, 2, 0)

    def solve(self, X: np.ndarray) -> np.ndarray:
        """``A^-1 X`` for mode arrays ``(N, *batch, K)``."""
        sp = self.space
        nd = X.ndim
        Y = sp.sine(sp.sine(X) * sp.column(self._inv_mu2, nd))
        y0, yN = Y[0], Y[-1]
        Ci = self._Cinv
        c0 = Ci[0, 0] * y0 + Ci[0, 1] * yN
        c1 = Ci[1, 0] * y0 + Ci[1, 1] * yN
        Y -= sp.column(self._P[:, 0], nd) * c0 + sp.column(self._P[:, 1], nd) * c1
        return Y

    def velocity(self, S: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(u1, u2, u3)`` mode arrays for temperature mode array ``S``."""
        sp = self.space
        y = self.solve(S) * self.Ra
        dw = sp.dz(y)
        u3 = sp.ksq * y
        return 1j * sp.k1 * dw, 1j * sp.k2 * dw, u3

    def vertical_velocity(self, S: np.ndarray) -> np.ndarray:
        return self.space.ksq * self.solve(S) * self.Ra

    def adjoint(self, f1: np.ndarray, f2: np.ndarray, f3: np.ndarray) -> np.ndarray:
        """``M*`` on mode arrays: the vertical Stokes velocity for ``Ra f``."""
        sp = self.space
        rhs = sp.ksq * f3 + 1j * sp.dz(sp.k1 * f1 + sp.k2 * f2)
        return self.Ra * self.solve(rhs)


class StokesOperator:
    """Velocity operator ``M`` and its adjoint ``M*`` on full-layout fields.

    All horizontal modes except the Nyquist rows are solved; the mean mode
    carries no velocity.  The time steppers use the dealiased subset through
    :class:`SpectralStokes`.
    """

    def __init__(self, grid: Grid, Ra: float):
        self.grid = grid
        self.Ra = float(Ra)
        self.space = ModeSpace.full(grid)
        self.fast = SpectralStokes(self.space, Ra)
        self._solvers: dict[float, ModeSolver] = {}

    def solver_for(self, i1: int, i2: int) -> ModeSolver:
        """Banded reference factorisation for the mode at rfft index ``(i1, i2)``."""
        g = self.grid
        if not self.space.mask[i1, i2] or (i1 == 0 and i2 == 0):
            raise ValueError("mode carries no velocity")
        q = float(np.broadcast_to(g.ksq, (g.n1, g.n2h))[i1, i2])
        if q not in self._solvers:
            self._solvers[q] = ModeSolver(q, g.n3, g.h, self.Ra)
        return self._solvers[q]

    def _check(self, values: np.ndarray) -> np.ndarray:
        if values.shape[-3:] != self.grid.shape:
            raise ValueError(f"field shape {values.shape[-3:]} does not match grid {self.grid.shape}")
        return values

    def apply_M(self, T) -> VectorField:
        values = self._check(T.values if isinstance(T, ScalarField) else np.asarray(T))
        sp = self.space
        u = self.fast.velocity(sp.restrict(values))
        return VectorField(self.grid, *(sp.embed(c) for c in u))

    def apply_M_star(self, f: VectorField) -> ScalarField:
        """Third component of the Stokes solve with right-hand side ``Ra f``.

        Wall values of ``f`` do not enter (the discrete operator only sees
        interior planes).
        """
        sp = self.space
        parts = [sp.restrict(self._check(c)) for c in f.components]
        return ScalarField(self.grid, sp.embed(self.fast.adjoint(*parts)))


def divergence(u: VectorField) -> ScalarField:
    """Spectral horizontal plus finite-difference vertical divergence."""
    g = u.grid
    c1 = to_spectral(u.u1) * (1j * g.k1 * g.derivative_mask)
    c2 = to_spectral(u.u2) * (1j * g.k2 * g.derivative_mask)
    horiz = to_physical(c1 + c2, g)
    return ScalarField(g, horiz + vertical_derivative(u.u3, g.h))


def dense_primitive_solve(ksq_pair: tuple[float, float], T_nodes: np.ndarray, n3: int, Ra: float):
    """Monolithic velocity-pressure solve for one wavenumber (test oracle).

    Staggered in x3: ``u1, u2, p`` at cell centres, ``u3`` at interior nodes,
    no-slip for the horizontal components through antisymmetric ghost cells.
    ``T_nodes`` holds the interior nodal temperature.  Returns nodal
    ``(u1, u2, u3)`` on interior planes, the horizontal components averaged
    from the two adjacent cell centres.
    """
    k1, k2 = ksq_pair
    ksq = k1**2 + k2**2
    h = 1.0 / n3
    nc, nn = n3, n3 - 1
    Lc = _second_difference(nc, h)
    Lc[0, 0] -= 1.0 / h**2
    Lc[-1, -1] -= 1.0 / h**2
    Lc = Lc - ksq * np.eye(nc)
    Ln = _second_difference(nn, h) - ksq * np.eye(nn)
    Df = np.zeros((nc, nn))  # nodes -> centres
    for j in range(nc):
        if j < nn:
            Df[j, j] += 1.0 / h
        if j - 1 >= 0:
            Df[j, j - 1] -= 1.0 / h
    Db = -Df.T  # centres -> interior nodes
    N = 4 * nc - 1
    A = np.zeros((N, N), dtype=complex)
    s1, s2, sp, s3 = slice(0, nc), slice(nc, 2 * nc), slice(2 * nc, 3 * nc), slice(3 * nc, N)
    A[s1, s1] = -Lc
    A[s1, sp] = 1j * k1 * np.eye(nc)
    A[s2, s2] = -Lc
    A[s2, sp] = 1j * k2 * np.eye(nc)
    A[s3, s3] = -Ln
    A[s3, sp] = Db
    # continuity at centres, placed in the pressure rows
    A[sp, s1] = 1j * k1 * np.eye(nc)
    A[sp, s2] = 1j * k2 * np.eye(nc)
    A[sp, s3] = Df
    rhs = np.zeros((N,) + T_nodes.shape[1:], dtype=complex)
    rhs[s3] = Ra * T_nodes
    sol = np.linalg.solve(A, rhs)
    uc1, uc2, u3 = sol[s1], sol[s2], sol[s3]
    u1 = 0.5 * (uc1[:-1] + uc1[1:])
    u2 = 0.5 * (uc2[:-1] + uc2[1:])
    return u1, u2, u3
