"""Grids, transforms, derivatives and discrete norms on the periodic strip.

The domain is ``T^2 x (0, 1)`` with ``2*pi``-periodic horizontal directions.
Physical arrays are laid out ``(..., n3 + 1, n1, n2)`` (x3-major, so the
vertical index is the slowest of the three field axes); spectral arrays
are the real FFT over the two horizontal axes, ``(..., n3 + 1, n1, n2 // 2 + 1)``,
normalised so that ``f = sum_k fhat_k exp(i k.x)``.

Vertical derivatives are second-order finite differences on the uniform
grid ``x3_j = j / n3``; vertical integrals use the trapezoidal rule.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import threading

import numpy as np
import pyfftw
import scipy.fft

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "to_spectral",
    "to_physical",
    "horizontal_derivative",
    "vertical_derivative",
    "vertical_second_derivative",
    "laplacian",
    "inner",
    "sobolev_norm",
    "h2_seminorm",
    "h3_seminorm",
    "fft_workers",
    "ModeSpace",
]

FIELD_AXES = (-2, -1)


def fft_workers() -> int:
    """Worker count for FFTs, capped by ``BENARD_MIX_THREADS``."""
    import os

    value = os.environ.get("BENARD_MIX_THREADS")
    if value is None:
        return 1
    return max(1, int(value))


@dataclass(frozen=True)
class Grid:
    n1: int
    n2: int
    n3: int
    c: float = 0.5
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        for name in ("n1", "n2"):
            n = getattr(self, name)
            if n < 8 or n % 2:
                raise ValueError(f"{name} must be even and >= 8, got {n}")
        if self.n3 < 2:
            raise ValueError(f"n3 must be >= 2, got {self.n3}")
        if not 0.0 < self.c < 1.0:
            raise ValueError(f"c must lie in (0, 1), got {self.c}")
        layer = self.c * self.n3
        if abs(layer - round(layer)) > 1e-9:
            raise ValueError(f"c * n3 must be an integer, got {layer}")

    # -- coordinates -------------------------------------------------------
    @property
    def h(self) -> float:
        return 1.0 / self.n3

    @property
    def n2h(self) -> int:
        return self.n2 // 2 + 1

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n3 + 1, self.n1, self.n2)

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        return (self.n3 + 1, self.n1, self.n2h)

    @property
    def layer_index(self) -> int:
        """Index of the grid plane ``x3 = c``."""
        return int(round(self.c * self.n3))

    @cached_property
    def x1(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n1) / self.n1

    @cached_property
    def x2(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n2) / self.n2

    @cached_property
    def x3(self) -> np.ndarray:
        return np.arange(self.n3 + 1) / self.n3

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays of shape ``(n3+1, n1, n2)``."""
        return (
            self.x1[None, :, None],
            self.x2[None, None, :],
            self.x3[:, None, None],
        )

    @cached_property
    def k1(self) -> np.ndarray:
        """Integer wavenumbers along x1, shape ``(n1, 1)``."""
        return np.fft.fftfreq(self.n1, 1.0 / self.n1)[:, None]

    @cached_property
    def k2(self) -> np.ndarray:
        """Integer wavenumbers along x2, shape ``(1, n2h)``."""
        return np.fft.rfftfreq(self.n2, 1.0 / self.n2)[None, :]

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.k1**2 + self.k2**2

    @cached_property
    def derivative_mask(self) -> np.ndarray:
        """Zero on the Nyquist rows, where ``i k`` has no real counterpart."""
        mask = np.ones((self.n1, self.n2h))
        mask[self.n1 // 2, :] = 0.0
        mask[:, -1] = 0.0
        return mask

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        k1max = int(np.ceil(self.dealias_fraction * self.n1 / 2)) - 1
        k2max = int(np.ceil(self.dealias_fraction * self.n2 / 2)) - 1
        return (np.abs(self.k1) <= k1max) & (np.abs(self.k2) <= k2max)

    @cached_property
    def active(self) -> tuple[np.ndarray, np.ndarray]:
        """Index arrays ``(i1, i2)`` of the retained (dealiased) modes."""
        return np.nonzero(self.dealias_mask)

    @cached_property
    def mode_weights(self) -> np.ndarray:
        """Multiplicity of each rfft column in a full-plane sum."""
        w = np.full((self.n1, self.n2h), 2.0)
        w[:, 0] = 1.0
        if self.n2 % 2 == 0:
            w[:, -1] = 1.0
        return w

    @cached_property
    def trapezoid(self) -> np.ndarray:
        w = np.full(self.n3 + 1, self.h)
        w[0] = w[-1] = 0.5 * self.h
        return w

    @property
    def area(self) -> float:
        return 4 * np.pi**2

    def conduction(self, T_b: float, T_u: float) -> "ScalarField":
        """The linear profile ``T_b + x3 (T_u - T_b)``."""
        profile = T_b + self.x3 * (T_u - T_b)
        values = np.broadcast_to(profile[:, None, None], self.shape).copy()
        return ScalarField(self, values, T_b, T_u)

    def field(self, func, bottom: float = 0.0, top: float = 0.0) -> "ScalarField":
        x1, x2, x3 = self.mesh()
        values = np.broadcast_to(func(x1, x2, x3), self.shape).astype(float)
        return ScalarField(self, values.copy(), bottom, top)

    def zeros(self) -> "ScalarField":
        return ScalarField(self, np.zeros(self.shape))


def to_spectral(values: np.ndarray) -> np.ndarray:
    """Horizontal real FFT over the last two axes."""
    return scipy.fft.rfft2(values, axes=FIELD_AXES, norm="forward", workers=fft_workers())


def to_physical(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Inverse of :func:`to_spectral`."""
    if coeffs.shape[-2:] != (grid.n1, grid.n2h):
        raise ValueError(f"spectral shape {coeffs.shape[-2:]} does not match grid")
    return scipy.fft.irfft2(
        coeffs, s=(grid.n1, grid.n2), axes=FIELD_AXES, norm="forward", workers=fft_workers()
    )


@dataclass(frozen=True)
class ScalarField:
    """Real scalar on the strip with optional Dirichlet data ``(bottom, top)``."""

    grid: Grid
    values: np.ndarray
    bottom: float = 0.0
    top: float = 0.0

    def __post_init__(self):
        if self.values.shape[-3:] != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape[-3:]} does not match grid {self.grid.shape}"
            )

    @cached_property
    def spectral(self) -> np.ndarray:
        return to_spectral(self.values)

    @classmethod
    def from_spectral(cls, grid: Grid, coeffs: np.ndarray, bottom=0.0, top=0.0) -> "ScalarField":
        return cls(grid, to_physical(coeffs, grid), bottom, top)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values, self.bottom, self.top)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(
            self.grid, self.values + other.values, self.bottom + other.bottom, self.top + other.top
        )

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(
            self.grid, self.values - other.values, self.bottom - other.bottom, self.top - other.top
        )

    def __mul__(self, scale: float) -> "ScalarField":
        return ScalarField(self.grid, scale * self.values, scale * self.bottom, scale * self.top)

    __rmul__ = __mul__


@dataclass(frozen=True)
class VectorField:
    """Three-component velocity-like field with homogeneous Dirichlet data."""

    grid: Grid
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray

    @property
    def components(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.u1, self.u2, self.u3)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape), np.zeros(grid.shape))

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(u))) for u in self.components)


def horizontal_derivative(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    """Spectral derivative along x1 (``axis=1``) or x2 (``axis=2``)."""
    if axis not in (1, 2):
        raise ValueError("axis must be 1 or 2")
    k = grid.k1 if axis == 1 else grid.k2
    coeffs = to_spectral(values) * (1j * k * grid.derivative_mask)
    return to_physical(coeffs, grid)


def vertical_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Centred second-order derivative along axis -3, one-sided at the walls."""
    n = values.shape[-3] - 1
    if n < 2:
        raise ValueError("need at least two vertical intervals")
    out = np.empty_like(values)
    out[..., 1:-1, :, :] = (values[..., 2:, :, :] - values[..., :-2, :, :]) / (2 * h)
    out[..., 0, :, :] = (-3 * values[..., 0, :, :] + 4 * values[..., 1, :, :] - values[..., 2, :, :]) / (2 * h)
    out[..., -1, :, :] = (3 * values[..., -1, :, :] - 4 * values[..., -2, :, :] + values[..., -3, :, :]) / (2 * h)
    return out


def vertical_second_derivative(values: np.ndarray, h: float) -> np.ndarray:
    """Three-point second derivative on interior planes; wall planes use
    the second-order four-point one-sided stencil."""
    n = values.shape[-3] - 1
    if n < 3:
        raise ValueError("need at least three vertical intervals")
    out = np.empty_like(values)
    out[..., 1:-1, :, :] = (values[..., 2:, :, :] - 2 * values[..., 1:-1, :, :] + values[..., :-2, :, :]) / h**2
    out[..., 0, :, :] = (
        2 * values[..., 0, :, :] - 5 * values[..., 1, :, :] + 4 * values[..., 2, :, :] - values[..., 3, :, :]
    ) / h**2
    out[..., -1, :, :] = (
        2 * values[..., -1, :, :] - 5 * values[..., -2, :, :] + 4 * values[..., -3, :, :] - values[..., -4, :, :]
    ) / h**2
    return out


def laplacian(values: np.ndarray, grid: Grid) -> np.ndarray:
    coeffs = to_spectral(values)
    horiz = to_physical(-grid.ksq * grid.derivative_mask * coeffs, grid)
    return horiz + vertical_second_derivative(values, grid.h)


def inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> np.ndarray:
    """Discrete L2 inner product over the trailing three axes."""
    prod = np.mean(a * b, axis=FIELD_AXES) * grid.area
    return np.tensordot(prod, grid.trapezoid, axes=([-1], [0]))


def _norm(values: np.ndarray, grid: Grid) -> np.ndarray:
    return np.sqrt(inner(values, values, grid))


def sobolev_norm(f, order: int = 0, grid: Grid | None = None) -> float | np.ndarray:
    """L2 (``order=0``) or H1 (``order=1``) norm of a field.

    ``f`` may be a :class:`ScalarField` or a raw array on ``grid``; leading
    batch axes are reduced separately.
    """
    if isinstance(f, ScalarField):
        grid, values = f.grid, f.values
    else:
        values = f
    if grid is None:
        raise ValueError("grid is required for raw arrays")
    if order not in (0, 1):
        raise ValueError(f"order must be 0 or 1, got {order}")
    total = inner(values, values, grid)
    if order == 1:
        coeffs = to_spectral(values)
        for k in (grid.k1, grid.k2):
            d = to_physical(1j * k * grid.derivative_mask * coeffs, grid)
            total = total + inner(d, d, grid)
        d3 = vertical_derivative(values, grid.h)
        total = total + inner(d3, d3, grid)
    return np.sqrt(total)


def _seminorm_from_derivatives(values: np.ndarray, grid: Grid, order: int) -> np.ndarray:
    # Mixed derivatives of total order `order`, horizontal ones spectral.
    coeffs = to_spectral(values)
    total = 0.0
    for a in range(order + 1):
        for b in range(order + 1 - a):
            c3 = order - a - b
            mult = (1j * grid.k1) ** a * (1j * grid.k2) ** b * grid.derivative_mask
            d = to_physical(coeffs * mult, grid)
            for _ in range(c3):
                d = vertical_derivative(d, grid.h)
            from math import factorial

            weight = factorial(order) / (factorial(a) * factorial(b) * factorial(c3))
            total = total + weight * inner(d, d, grid)
    return np.sqrt(total)


def h2_seminorm(f: ScalarField) -> float:
    return _seminorm_from_derivatives(f.values, f.grid, 2)


def h3_seminorm(f: ScalarField) -> float:
    """Diagnostic-only: repeated one-sided differences are low order at the walls."""
    return _seminorm_from_derivatives(f.values, f.grid, 3)


class _PlaneFFT:
    """Cached single-threaded FFTW plans over the last two axes.

    Plans use ``FFTW_ESTIMATE`` on aligned buffers owned by the plan, so the
    algorithm (and therefore every bit of the result) depends only on the
    array shape.  One cache per thread; plans are not shared.
    """

    _local = threading.local()

    @classmethod
    def _cache(cls) -> dict:
        cache = getattr(cls._local, "plans", None)
        if cache is None:
            cache = cls._local.plans = {}
        return cache

    @classmethod
    def forward(cls, shape: tuple[int, ...]):
        cache = cls._cache()
        key = ("forward", shape)
        if key not in cache:
            n1, n2 = shape[-2:]
            src = pyfftw.empty_aligned(shape, dtype="float64")
            dst = pyfftw.empty_aligned(shape[:-1] + (n2 // 2 + 1,), dtype="complex128")
            cache[key] = pyfftw.FFTW(src, dst, axes=(-2, -1), flags=("FFTW_ESTIMATE",), threads=1)
        return cache[key]

    @classmethod
    def inverse(cls, shape: tuple[int, ...], ncols: int):
        """Two-stage inverse for spectra living in the first ``ncols`` columns.

        Stage one transforms only those columns along k1; stage two is the
        complex-to-real transform along k2.  Both preserve their inputs, so
        the zero padding is written once, at plan creation.
        """
        cache = cls._cache()
        key = ("inverse", shape, ncols)
        if key not in cache:
            n1, n2 = shape[-2:]
            lead = shape[:-2]
            a = pyfftw.zeros_aligned(lead + (n1, ncols), dtype="complex128")
            b = pyfftw.zeros_aligned(lead + (n1, n2 // 2 + 1), dtype="complex128")
            c = pyfftw.empty_aligned(lead + (n1, n2), dtype="float64")
            # stage one writes straight into the live columns of stage two's input
            s1 = pyfftw.FFTW(
                a, b[..., :ncols], axes=(-2,), direction="FFTW_BACKWARD", flags=("FFTW_ESTIMATE",), threads=1
            )
            # pyfftw preserves c2r inputs unless told otherwise
            s2 = pyfftw.FFTW(b, c, axes=(-1,), direction="FFTW_BACKWARD", flags=("FFTW_ESTIMATE",), threads=1)
            cache[key] = (a, s1, s2)
        return cache[key]


class ModeSpace:
    """Interior-plane spectral arrays on a rectangle of horizontal modes.

    Arrays have shape ``(n3 - 1, *batch, K)``: the vertical (interior plane)
    axis first, any batch axes, then one column per retained wavenumber.
    Fields vanish on the walls, so wall planes are not stored.  The retained
    set is ``|k1| <= k1max, 0 <= k2 <= k2max`` in the real-FFT half plane,
    ordered like ``np.nonzero`` on the rfft layout (k1 rows ``0..k1max``
    then ``-k1max..-1``).

    Keeping the vertical axis first turns every vertical operator (sine
    transform, Stokes solve) into one large matrix product.
    """

    def __init__(self, grid: Grid, k1max: int | None = None, k2max: int | None = None):
        self.grid = grid
        d1 = int(np.ceil(grid.dealias_fraction * grid.n1 / 2)) - 1
        d2 = int(np.ceil(grid.dealias_fraction * grid.n2 / 2)) - 1
        self.k1max = d1 if k1max is None else int(k1max)
        self.k2max = d2 if k2max is None else int(k2max)
        if not (0 <= self.k1max < grid.n1 // 2 and 0 <= self.k2max < grid.n2 // 2):
            raise ValueError("mode rectangle must exclude the Nyquist rows")
        rows = np.r_[0 : self.k1max + 1, grid.n1 - self.k1max : grid.n1]
        cols = np.arange(self.k2max + 1)
        mask = np.zeros((grid.n1, grid.n2h), dtype=bool)
        mask[np.ix_(rows, cols)] = True
        self.mask = mask
        self.i1, self.i2 = np.nonzero(mask)
        self._rows = (self.k1max + 1, len(rows))
        self.k1 = np.broadcast_to(grid.k1, mask.shape)[self.i1, self.i2].astype(float)
        self.k2 = np.broadcast_to(grid.k2, mask.shape)[self.i1, self.i2].astype(float)
        self.ksq = self.k1**2 + self.k2**2
        self.inv_ksq = np.divide(1.0, self.ksq, out=np.zeros_like(self.ksq), where=self.ksq > 0)
        self.weights = np.broadcast_to(grid.mode_weights, mask.shape)[self.i1, self.i2]
        self.K = len(self.i1)
        self.N = grid.n3 - 1
        h = grid.h
        j = np.arange(1, self.N + 1)
        # orthonormal DST-I matrix; symmetric and its own inverse
        self.Q = np.sqrt(2.0 / grid.n3) * np.sin(np.pi * np.outer(j, j) * h)
        self.lam = -(4.0 / h**2) * np.sin(0.5 * np.pi * j * h) ** 2
        # conjugate partners within the k2 = 0 column (real-field redundancy)
        col0 = np.nonzero(self.k2 == 0)[0]
        lookup = {int(self.k1[i]): i for i in col0}
        self._col0 = col0
        self._partner = np.array([lookup[-int(self.k1[i])] for i in col0], dtype=int)

    @classmethod
    def full(cls, grid: Grid) -> "ModeSpace":
        """All modes except the Nyquist rows."""
        return cls(grid, grid.n1 // 2 - 1, grid.n2 // 2 - 1)

    def zeros(self, batch: tuple[int, ...] = ()) -> np.ndarray:
        return np.zeros((self.N,) + tuple(batch) + (self.K,), dtype=complex)

    def column(self, a: np.ndarray, ndim: int) -> np.ndarray:
        """Reshape an ``(N, K)`` table to broadcast against ``ndim``-d arrays."""
        return a.reshape((a.shape[0],) + (1,) * (ndim - 2) + (a.shape[-1],))

    # -- vertical operators (axis 0) -------------------------------------
    def sine(self, X: np.ndarray) -> np.ndarray:
        """Discrete sine transform along the vertical axis (an involution)."""
        X = np.ascontiguousarray(X, dtype=complex)
        flat = X.view(float).reshape(self.N, -1)
        return (self.Q @ flat).view(complex).reshape(X.shape)

    def dz(self, X: np.ndarray) -> np.ndarray:
        """Centred vertical derivative with zero wall values."""
        out = np.empty_like(X)
        h2 = 2 * self.grid.h
        np.subtract(X[2:], X[:-2], out=out[1:-1])
        out[0] = X[1]
        out[-1] = -X[-2]
        out /= h2
        return out

    def d2z(self, X: np.ndarray) -> np.ndarray:
        out = -2.0 * X
        out[1:] += X[:-1]
        out[:-1] += X[1:]
        out /= self.grid.h**2
        return out

    def laplacian(self, X: np.ndarray) -> np.ndarray:
        return self.d2z(X) - self.ksq * X

    def symmetrize(self, X: np.ndarray) -> np.ndarray:
        """Project (in place) onto arrays representing real fields.

        The ``k2 = 0`` column stores both ``k`` and ``-k``; round-off can
        leave an anti-Hermitian part there that the inverse transform drops
        but the linear dynamics amplify.
        """
        a, b = self._col0, self._partner
        X[..., a] = 0.5 * (X[..., a] + X[..., b].conj())
        return X

    # -- horizontal transforms -------------------------------------------
    def to_physical(self, X, copy: bool = True) -> np.ndarray:
        """Physical plane values ``(..., n1, n2)`` of mode array(s) ``X``.

        ``X`` is an array or a sequence of equally shaped arrays (stacked on
        a new leading axis).  With ``copy=False`` the result is the plan's
        output buffer, valid until the next inverse transform of the same
        shape on this thread.
        """
        g = self.grid
        parts = X if isinstance(X, (list, tuple)) else None
        lead = (len(parts),) + parts[0].shape[:-1] if parts is not None else X.shape[:-1]
        c = self.k2max + 1
        a, s1, s2 = _PlaneFFT.inverse(lead + (g.n1, g.n2), c)
        lo, nrows = self._rows
        hi = g.n1 - (nrows - lo)
        if parts is None:
            parts, dest = [X], [a]
        else:
            dest = list(a)
        for Xi, A in zip(parts, dest):
            Xr = Xi.reshape(Xi.shape[:-1] + (nrows, c))
            A[..., :lo, :] = Xr[..., :lo, :]
            A[..., hi:, :] = Xr[..., lo:, :]
        s1(normalise_idft=False)
        out = s2(normalise_idft=False)
        return out.copy() if copy else out

    def forward_buffer(self, lead: tuple[int, ...]) -> np.ndarray:
        """Input buffer of the forward plan for planes with leading shape ``lead``.

        Fill it and call :meth:`forward_execute` with the same ``lead``.
        """
        g = self.grid
        return _PlaneFFT.forward(tuple(lead) + (g.n1, g.n2)).input_array

    def forward_execute(self, lead: tuple[int, ...]) -> np.ndarray:
        g = self.grid
        F = _PlaneFFT.forward(tuple(lead) + (g.n1, g.n2))()
        lo, nrows = self._rows
        c = self.k2max + 1
        out = np.empty(F.shape[:-2] + (nrows, c), dtype=complex)
        out[..., :lo, :] = F[..., :lo, :c]
        out[..., lo:, :] = F[..., g.n1 - (nrows - lo) :, :c]
        out *= 1.0 / (g.n1 * g.n2)
        return out.reshape(F.shape[:-2] + (self.K,))

    def from_physical(self, P: np.ndarray) -> np.ndarray:
        """Forward transform of plane values, truncated to the retained modes."""
        lead = P.shape[:-2]
        self.forward_buffer(lead)[...] = P
        return self.forward_execute(lead)

    # -- full-layout interface -------------------------------------------
    def embed(self, X: np.ndarray) -> np.ndarray:
        """Full physical field(s) ``(*batch, n3 + 1, n1, n2)``, zero walls."""
        g = self.grid
        inner_vals = np.moveaxis(self.to_physical(X, copy=False), 0, -3)
        out = np.zeros(inner_vals.shape[:-3] + g.shape)
        out[..., 1:-1, :, :] = inner_vals
        return out

    def restrict(self, values: np.ndarray) -> np.ndarray:
        """Interior planes of full field(s), truncated to the retained modes."""
        return self.from_physical(np.moveaxis(np.asarray(values, dtype=float)[..., 1:-1, :, :], -3, 0))

    def inner(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """L2 inner product of the real fields represented by X and Y."""
        s = np.sum(self.weights * (X.conj() * Y).real, axis=-1)
        return self.grid.area * self.grid.h * np.sum(s, axis=0)

    def norm(self, X: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(X, X), 0.0))

    def h1_norm(self, X: np.ndarray) -> np.ndarray:
        """H1 norm with the same stencils as :func:`sobolev_norm`.

        Horizontal derivatives are exact per mode; the vertical one is the
        centred difference on interior planes and one-sided at the walls.
        """
        h = self.grid.h
        d3 = self.dz(X)
        # one-sided wall derivatives of a field vanishing on the walls
        bottom = (4 * X[0] - X[1]) / (2 * h)
        top = -(4 * X[-1] - X[-2]) / (2 * h)
        w = self.weights
        area = self.grid.area

        def plane_sum(A):
            return np.sum(w * (A.conj() * A).real, axis=-1)

        total = (1.0 + self.ksq) * (X.conj() * X).real
        total = np.sum(w * total, axis=-1)
        total = area * h * (np.sum(total, axis=0) + np.sum(plane_sum(d3), axis=0))
        total = total + area * 0.5 * h * (plane_sum(bottom) + plane_sum(top))
        return np.sqrt(total)
