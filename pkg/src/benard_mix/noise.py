"""Bounded space-time noise localised in the bottom layer ``0 < x3 < c``.

One realisation on a unit interval is

    eta(t, x) = a * sum_j b_j xi_j phi_j(t, x),      b_j = b0 * j**(-s),

where ``phi_j`` are orthonormal in the space-time inner product

    <f, g>_E = int_0^1 ( <lap f, lap g> + <f, g> + <d_t f, d_t g> ) dt

and the ``xi_j`` are i.i.d. on ``[-1, 1]`` with density
``(15/16) (1 - xi^2)^2``.  The basis comes from Gram-Schmidt applied to
separable products ``tau_p(t) sigma_q(x1, x2) beta_r(x3)``: shifted
Legendre polynomials in time, real horizontal Fourier modes, and
``beta_r = sin^3(pi r x3 / c)`` on ``[0, c]`` extended by zero, which keeps
the extension twice differentiable.

The discrete E product works on interior planes (every element vanishes on
the walls): the Laplacian is spectral horizontally and three-point
vertically, the vertical quadrature is the trapezoid rule, and time uses the
midpoint rule on the stepper's substep grid with exact time derivatives of
the polynomials.  That is the grid on which the time stepper samples
forcing, and it is the product :class:`ModeSpace` computes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.special
import scipy.stats
from numpy.polynomial import legendre

from .grid import Grid, ModeSpace, ScalarField, inner, laplacian, to_physical

__all__ = [
    "NoiseConfig",
    "NoiseBasis",
    "NoiseSample",
    "RankDeficiencyError",
    "build_basis",
    "sample_xi",
    "xi_cdf",
    "xi_stream",
    "sample_noise",
    "e_inner",
    "gram_residual",
]

XI_VARIANCE = 1.0 / 7.0


class RankDeficiencyError(ValueError):
    """The raw family is linearly dependent in the E inner product."""

    def __init__(self, index: int, pivot: float):
        super().__init__(f"raw basis element {index} is dependent on its predecessors (pivot {pivot:.3e})")
        self.index = index
        self.pivot = pivot


@dataclass(frozen=True)
class NoiseConfig:
    a: float = 1.0
    m: int = 64
    s: float = 1.0
    b0: float = 1.0
    c: float = 0.5
    seed: int = 0
    n_substeps: int = 256

    def __post_init__(self):
        errors = []
        # a = 0 switches the noise off (deterministic runs)
        if not self.a >= 0:
            errors.append(f"noise.a must be non-negative, got {self.a}")
        if self.m < 1:
            errors.append(f"noise.m must be >= 1, got {self.m}")
        if not self.b0 > 0:
            errors.append(f"noise.b0 must be positive, got {self.b0}")
        if not 0 < self.c < 1:
            errors.append(f"noise.c must lie in (0, 1), got {self.c}")
        if self.n_substeps < 1:
            errors.append("n_substeps must be >= 1")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def b(self) -> np.ndarray:
        j = np.arange(1, self.m + 1, dtype=float)
        return self.b0 * j ** (-self.s)


# -- raw family -------------------------------------------------------------


def _horizontal_functions(count: int) -> list[tuple[str, int, int]]:
    """Real Fourier functions ordered by ``|k|^2``: constant, then cos/sin pairs."""
    out = [("const", 0, 0)]
    radius = 1
    while len(out) < count:
        ks = [
            (k1, k2)
            for k1 in range(-radius, radius + 1)
            for k2 in range(0, radius + 1)
            if (k2 > 0 or k1 > 0) and k1 * k1 + k2 * k2 <= radius * radius
        ]
        ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, -k[0], k[1]))
        out = [("const", 0, 0)]
        for k1, k2 in ks:
            out.append(("cos", k1, k2))
            out.append(("sin", k1, k2))
        radius += 1
    return out


def _raw_indices(m: int) -> list[tuple[int, int, int]]:
    """First ``m`` triples ``(p, q, r)`` ordered by total degree.

    The degree of a horizontal function is the rank of its ``|k|^2`` shell,
    so low time, horizontal and vertical complexity come first.
    """
    side = 1
    while True:
        horiz = _horizontal_functions(4 * side + 1)
        shells = sorted({k1 * k1 + k2 * k2 for _, k1, k2 in horiz})
        qdeg = [shells.index(k1 * k1 + k2 * k2) for _, k1, k2 in horiz]
        triples = [
            (p, q, r)
            for p in range(side)
            for q in range(len(horiz))
            for r in range(1, side + 1)
        ]
        triples.sort(key=lambda t: (t[0] + qdeg[t[1]] + t[2], t[2], t[1], t[0]))
        if len(triples) >= 4 * m and side >= 3:
            break
        side += 1
    return triples[:m]


def _time_poly(p: int, t: np.ndarray, derivative: bool = False) -> np.ndarray:
    """Shifted Legendre polynomial ``P_p(2t - 1)``, unit L2 norm on ``[0, 1]``."""
    coef = np.zeros(p + 1)
    coef[p] = np.sqrt(2 * p + 1)
    if derivative:
        return 2.0 * legendre.legval(2 * t - 1, legendre.legder(coef))
    return legendre.legval(2 * t - 1, coef)


@dataclass
class NoiseBasis:
    """Orthonormalised separable basis on one unit interval.

    ``phi_j = sum_i factor[j, i] * raw_i`` with ``factor`` lower triangular,
    so the span of the first ``l`` elements equals that of the first ``l``
    raw products.
    """

    grid: Grid
    config: NoiseConfig
    triples: list[tuple[int, int, int]]
    horizontal: list[tuple[str, int, int]]
    factor: np.ndarray
    raw_gram: np.ndarray
    c_basis: float = field(default=0.0)

    @property
    def m(self) -> int:
        return len(self.triples)

    @property
    def times(self) -> np.ndarray:
        n = self.config.n_substeps
        return (np.arange(n) + 0.5) / n

    @property
    def n_time(self) -> int:
        return 1 + max(p for p, _, _ in self.triples)

    # -- separable factors ---------------------------------------------
    def beta(self, r: int) -> np.ndarray:
        """Vertical profile on all grid planes, exactly zero for ``x3 >= c``."""
        g = self.grid
        x3 = g.x3
        out = np.zeros_like(x3)
        inside = np.arange(len(x3)) < g.layer_index
        out[inside] = np.sin(np.pi * r * x3[inside] / g.c) ** 3
        return out

    def sigma(self, q: int) -> np.ndarray:
        kind, k1, k2 = self.horizontal[q]
        x1, x2, _ = self.grid.mesh()
        if kind == "const":
            return np.ones((1, self.grid.n1, self.grid.n2))
        phase = k1 * x1 + k2 * x2
        return np.cos(phase) if kind == "cos" else np.sin(phase)

    def raw_field(self, i: int) -> np.ndarray:
        """Spatial part ``sigma_q beta_r`` of raw element ``i`` on the full grid."""
        _, q, r = self.triples[i]
        return self.sigma(q) * self.beta(r)[:, None, None]

    def time_table(self, t: np.ndarray, derivative: bool = False) -> np.ndarray:
        """``tau_p(t)`` for ``p < n_time``, shape ``(n_time, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return np.stack([_time_poly(p, t, derivative) for p in range(self.n_time)])

    # -- mode representation -------------------------------------------
    def raw_modes(self, space: ModeSpace) -> np.ndarray:
        """Spatial parts on a mode space, ``(m, N, K)``."""
        cache = self.__dict__.setdefault("_mode_cache", {})
        key = (space.k1max, space.k2max)
        if key not in cache:
            planes = np.stack([self.raw_field(i) for i in range(self.m)])
            cache[key] = np.moveaxis(space.restrict(planes), 1, 0).copy()
        return cache[key]

    def element(self, j: int, t: float) -> ScalarField:
        """``phi_j(t, .)`` as a field (0-based ``j``)."""
        tau = self.time_table([t])[:, 0]
        values = np.zeros(self.grid.shape)
        for i in range(j + 1):
            if self.factor[j, i] != 0.0:
                p = self.triples[i][0]
                values += self.factor[j, i] * tau[p] * self.raw_field(i)
        return ScalarField(self.grid, values)

    def space_time_coefficients(self, coef: np.ndarray) -> np.ndarray:
        """Raw-product weights ``d = factor^T coef`` for a combination of ``phi_j``."""
        return np.asarray(coef) @ self.factor

    def evaluate(self, coef: np.ndarray, t: float) -> ScalarField:
        """Field ``sum_j coef_j phi_j(t, .)``."""
        d = self.space_time_coefficients(coef)
        tau = self.time_table([t])[:, 0]
        values = np.zeros(self.grid.shape)
        for i, (p, _, _) in enumerate(self.triples):
            if d[i] != 0.0:
                values += d[i] * tau[p] * self.raw_field(i)
        return ScalarField(self.grid, values)


def _vertical_laplacian_gram(grid: Grid, betas: np.ndarray, ksq: float) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid Gram matrices of ``beta`` and of ``D2 beta - ksq beta``."""
    lap = np.zeros_like(betas)
    lap[:, 1:-1] = (betas[:, 2:] - 2 * betas[:, 1:-1] + betas[:, :-2]) / grid.h**2
    lap[:, 1:-1] -= ksq * betas[:, 1:-1]
    w = grid.trapezoid
    return (betas * w) @ betas.T, (lap * w) @ lap.T


def build_basis(config: NoiseConfig, grid: Grid, rank_tol: float = 1e-10) -> NoiseBasis:
    """Orthonormalise the first ``m`` raw products in the discrete E product.

    The raw Gram matrix is assembled from separable factors: horizontal
    functions are mutually orthogonal eigenfunctions of the horizontal
    Laplacian, so only products sharing ``sigma_q`` interact.  A Cholesky
    factorisation (Gram-Schmidt in matrix form) follows, repeated once for
    accuracy.  Raises :class:`RankDeficiencyError` naming the first raw
    element whose pivot falls below ``rank_tol`` relative to its norm.
    """
    if abs(grid.c - config.c) > 1e-12:
        raise ValueError(f"noise.c = {config.c} differs from grid c = {grid.c}")
    triples = _raw_indices(config.m)
    horizontal = _horizontal_functions(1 + max(q for _, q, _ in triples))
    m = len(triples)
    basis = NoiseBasis(grid, config, triples, horizontal, np.eye(m), np.eye(m))

    t = basis.times
    dt = 1.0 / config.n_substeps
    tau = basis.time_table(t)
    dtau = basis.time_table(t, derivative=True)
    time_mass = dt * tau @ tau.T
    time_stiff = dt * dtau @ dtau.T

    rmax = max(r for _, _, r in triples)
    betas = np.stack([basis.beta(r) for r in range(1, rmax + 1)])
    G = np.zeros((m, m))
    for q in sorted({q for _, q, _ in triples}):
        kind, k1, k2 = horizontal[q]
        ksq = float(k1 * k1 + k2 * k2)
        s2 = grid.area if kind == "const" else 0.5 * grid.area
        mass, stiff = _vertical_laplacian_gram(grid, betas, ksq)
        idx = [i for i, tr in enumerate(triples) if tr[1] == q]
        for i in idx:
            p, _, r = triples[i]
            for j in idx:
                pp, _, rr = triples[j]
                G[i, j] = s2 * (
                    time_mass[p, pp] * (stiff[r - 1, rr - 1] + mass[r - 1, rr - 1])
                    + time_stiff[p, pp] * mass[r - 1, rr - 1]
                )
    basis.raw_gram = G
    basis.factor = _orthonormal_factor(G, rank_tol)
    basis.c_basis = _basis_bound(basis)
    return basis


def _orthonormal_factor(G: np.ndarray, rank_tol: float) -> np.ndarray:
    m = G.shape[0]
    L = np.zeros_like(G)
    # explicit Cholesky so a failing pivot can be reported by index
    for j in range(m):
        s = G[j, j] - L[j, :j] @ L[j, :j]
        if s <= rank_tol * G[j, j]:
            raise RankDeficiencyError(j, s / G[j, j])
        L[j, j] = np.sqrt(s)
        L[j + 1 :, j] = (G[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    F = np.linalg.solve(L, np.eye(m))
    F = np.tril(F)
    # one refinement pass: re-orthonormalise against the computed Gram
    G2 = F @ G @ F.T
    L2 = np.linalg.cholesky(0.5 * (G2 + G2.T))
    return np.tril(np.linalg.solve(L2, F))


def _basis_bound(basis: NoiseBasis) -> float:
    """``max_t sum_j b_j ||phi_j(t)||_{L2}`` over the midpoint grid."""
    g = basis.grid
    t = basis.times
    tau = basis.time_table(t)
    fields = np.stack([basis.raw_field(i) for i in range(basis.m)])
    flat = fields.reshape(basis.m, -1)
    weighted = (fields * g.trapezoid[:, None, None]).reshape(basis.m, -1)
    gram_space = weighted @ flat.T * (g.area / (g.n1 * g.n2))
    b = basis.config.b
    best = 0.0
    p_of = np.array([p for p, _, _ in basis.triples])
    for n in range(len(t)):
        weights = basis.factor * tau[p_of, n][None, :]
        norms = np.sqrt(np.maximum(np.einsum("ji,ik,jk->j", weights, gram_space, weights), 0.0))
        best = max(best, float(b @ norms))
    return best


# -- the law of xi ----------------------------------------------------------


def sample_xi(rng: np.random.Generator, size=None) -> np.ndarray:
    """Draws from the density ``(15/16)(1 - xi^2)^2`` on ``[-1, 1]``.

    Inverse-CDF sampling: ``(1 + xi)/2`` is Beta(3, 3).
    """
    u = rng.random(size)
    return 2.0 * scipy.special.betaincinv(3.0, 3.0, u) - 1.0


def xi_cdf(x: np.ndarray) -> np.ndarray:
    """Distribution function of the coefficient law."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    return (8.0 + 15.0 * x - 10.0 * x**3 + 3.0 * x**5) / 16.0


def xi_stream(seed: int, chain: int, k: int) -> np.random.Generator:
    """Counter-based stream for step ``k`` of chain ``chain``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain), int(k)))
    return np.random.Generator(np.random.Philox(ss))


# -- samples ----------------------------------------------------------------


@dataclass
class NoiseSample:
    """One realisation ``eta_k`` (or a batch of them, one per chain).

    ``xi`` has shape ``(m,)`` or ``(B, m)``.
    """

    basis: NoiseBasis
    xi: np.ndarray
    a: float
    k: int = 0

    @property
    def coefficients(self) -> np.ndarray:
        """Coefficients ``a b_j xi_j`` against the orthonormal basis."""
        return self.a * self.basis.config.b * self.xi

    def e_norm(self) -> np.ndarray:
        return np.linalg.norm(self.coefficients, axis=-1)

    def evaluate(self, t: float) -> ScalarField:
        if self.xi.ndim != 1:
            raise ValueError("evaluate() needs a single sample")
        return self.basis.evaluate(self.coefficients, t)

    def forcing(self, space: ModeSpace):
        """Callable ``t -> mode array`` used by the time stepper."""
        return coefficient_forcing(self.basis, self.coefficients, space)


def coefficient_forcing(basis: NoiseBasis, coef: np.ndarray, space: ModeSpace):
    """Forcing callable for an arbitrary coefficient array ``(..., m)``.

    Mode arrays come out as ``(N, *batch, K)``.
    """
    coef = np.asarray(coef, dtype=float)
    d = basis.space_time_coefficients(coef)  # (..., m)
    R = basis.raw_modes(space)  # (m, N, K)
    p_of = np.array([p for p, _, _ in basis.triples])
    parts = []
    for p in range(basis.n_time):
        sel = p_of == p
        # (N, *batch, K)
        parts.append(np.einsum("...i,inK->n...K", d[..., sel], R[sel]))
    parts = np.stack(parts)

    def forcing(t: float) -> np.ndarray:
        tau = basis.time_table([t])[:, 0]
        return np.tensordot(tau, parts, axes=(0, 0))

    return forcing


def sample_noise(k: int, config: NoiseConfig, basis: NoiseBasis, rng=None, chain: int = 0) -> NoiseSample:
    """Fresh i.i.d. coefficients for step ``k``.

    Without an explicit ``rng`` the stream is the counter-based one keyed
    on ``(config.seed, chain, k)``, so the sample is a pure function of
    those three numbers.
    """
    if rng is None:
        rng = xi_stream(config.seed, chain, k)
    xi = sample_xi(rng, basis.m)
    return NoiseSample(basis, xi, config.a, k)


# -- validation -------------------------------------------------------------


def e_inner(basis: NoiseBasis, f_coef: np.ndarray, g_coef: np.ndarray) -> float:
    """Discrete E inner product of two basis combinations by full quadrature.

    Independent of the separable assembly: fields are evaluated on the grid
    at every midpoint, differentiated with :func:`laplacian`, and integrated.
    Used to verify orthonormality.
    """
    g = basis.grid
    t = basis.times
    dt = 1.0 / basis.config.n_substeps
    tau = basis.time_table(t)
    dtau = basis.time_table(t, derivative=True)
    df = basis.space_time_coefficients(f_coef)
    dg = basis.space_time_coefficients(g_coef)
    raw = np.stack([basis.raw_field(i) for i in range(basis.m)])
    lap = laplacian(raw, g)
    lap[:, 0] = lap[:, -1] = 0.0
    p_of = np.array([p for p, _, _ in basis.triples])

    def spatial(weights):
        return np.tensordot(weights, raw, axes=(0, 0)), np.tensordot(weights, lap, axes=(0, 0))

    total = 0.0
    for n in range(len(t)):
        fv, fl = spatial(df * tau[p_of, n])
        gv, gl = spatial(dg * tau[p_of, n])
        fd, _ = spatial(df * dtau[p_of, n])
        gd, _ = spatial(dg * dtau[p_of, n])
        total += dt * float(inner(fl, gl, g) + inner(fv, gv, g) + inner(fd, gd, g))
    return total


def gram_residual(basis: NoiseBasis, full_quadrature: bool = False) -> float:
    """``max |G - I|`` for the orthonormalised basis.

    By default the separable raw Gram matrix is transformed; with
    ``full_quadrature`` every entry is recomputed by :func:`e_inner`
    (slow, O(m^2) space-time quadratures).
    """
    m = basis.m
    if not full_quadrature:
        G = basis.factor @ basis.raw_gram @ basis.factor.T
        return float(np.abs(G - np.eye(m)).max())
    G = np.empty((m, m))
    E = np.eye(m)
    for i in range(m):
        for j in range(i, m):
            G[i, j] = G[j, i] = e_inner(basis, E[i], E[j])
    return float(np.abs(G - np.eye(m)).max())
