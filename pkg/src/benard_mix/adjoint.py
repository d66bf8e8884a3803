"""Tangent and dual equations along a frozen trajectory.

With ``u = M(T)`` and ``S = T - Tbar`` stored at every substep, the tangent
equation is

    d_t theta - lap theta + K(t) theta = zeta,
    K theta = <u, grad> theta + <M(theta), grad> S + (T_u - T_b) M3(theta),

integrated with the stepper's Crank-Nicolson/Adams-Bashforth-2 scheme, so
the tangent is the exact derivative of the discrete time-one map.  The dual

    d_t psi + lap psi - K(t)^T psi = 0,   psi(1) = psi_1,

uses the exact spatial transpose ``K^T psi = -<u, grad> psi + M*(G)`` (the
transport is skew, ``G`` collects ``psi grad S`` in the same discrete form,
plus ``(T_u - T_b) psi`` in the vertical) and is integrated backward in time
by the same scheme.  The two time discretisations are not transposes of one
another, so the duality identity holds up to a second-order residual.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import dual_products
from .grid import ModeSpace
from .noise import NoiseBasis, coefficient_forcing
from .thermal import FrozenTrajectory, transport

__all__ = [
    "LinearisedFlow",
    "DualityResult",
    "GramReport",
    "solve_tangent",
    "solve_dual",
    "duality_check",
    "density_diagnostic",
    "target_family",
    "ordered_map",
    "dual_coupling",
]


def _as_forcing(zeta, space: ModeSpace):
    if zeta is None:
        return None
    if hasattr(zeta, "forcing"):
        return zeta.forcing(space)
    return zeta


def _broadcast(X: np.ndarray, like: np.ndarray) -> np.ndarray:
    if X.shape == like.shape:
        return X
    extra = like.ndim - X.ndim
    view = X.reshape((X.shape[0],) + (1,) * extra + (X.shape[-1],))
    return np.broadcast_to(view, like.shape)


def dual_coupling(space: ModeSpace, S: np.ndarray, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vector field ``G`` with ``<A(w, S), psi> = <w, G>`` for all band-limited ``w``."""
    g = space.grid
    S = _broadcast(S, psi)
    phys = space.to_physical([psi, 1j * space.k1 * S, 1j * space.k2 * S, S], copy=False)
    lead = phys.shape[1:-2]
    flat = phys.reshape((4, lead[0], -1, g.n1, g.n2))
    out_lead = (3,) + lead
    buf = space.forward_buffer(out_lead)
    dual_products(flat, buf.reshape((3,) + flat.shape[1:]), 0.25 / g.h)
    G = space.forward_execute(out_lead)
    return G[0], G[1], G[2]


class LinearisedFlow:
    """Linearised operators at the substeps of a frozen trajectory."""

    def __init__(self, traj: FrozenTrajectory, cache_velocity: bool = True):
        self.traj = traj
        self.stepper = traj.stepper
        self.space = self.stepper.space
        self.config = self.stepper.config
        self.n_sub = len(traj) - 1
        if self.n_sub != self.config.substeps:
            raise ValueError(
                f"trajectory has {self.n_sub} substeps but the stepper uses {self.config.substeps}"
            )
        self._cache = {} if cache_velocity else None

    def prepare(self) -> "LinearisedFlow":
        """Fill the velocity cache (before sharing the flow between threads)."""
        if self._cache is not None:
            for n in range(self.n_sub + 1):
                self.velocity(n)
        return self

    def state(self, n: int) -> np.ndarray:
        return self.traj.modes[n]

    def velocity(self, n: int):
        if self._cache is None:
            return self.stepper.stokes.velocity(self.state(n))
        if n not in self._cache:
            self._cache[n] = self.stepper.stokes.velocity(self.state(n))
        return self._cache[n]

    def apply_K(self, n: int, theta: np.ndarray) -> np.ndarray:
        """``K(t_n) theta``; ``theta`` may carry batch axes."""
        sp = self.space
        u = tuple(_broadcast(c, theta) for c in self.velocity(n))
        a, _ = transport(sp, u, theta)
        w = self.stepper.stokes.velocity(theta)
        b, _ = transport(sp, w, _broadcast(self.state(n), theta), self.config.jump)
        return a + b

    def apply_KT(self, n: int, psi: np.ndarray) -> np.ndarray:
        """``K(t_n)^T psi`` in the discrete L2 product."""
        sp = self.space
        u = tuple(_broadcast(c, psi) for c in self.velocity(n))
        a, _ = transport(sp, u, psi)
        G1, G2, G3 = dual_coupling(sp, self.state(n), psi)
        if self.config.jump != 0.0:
            G3 = G3 + self.config.jump * psi
        return self.stepper.stokes.adjoint(G1, G2, G3) - a

    # -- time integration ------------------------------------------------
    def tangent(self, zeta, theta0: np.ndarray | None = None, record: bool = False, batch: tuple = ()):
        """Forward sweep from ``theta(0) = theta0`` (zero by default)."""
        sp, st = self.space, self.stepper
        forcing = _as_forcing(zeta, sp)
        dt = self.config.dt
        theta = sp.zeros(batch) if theta0 is None else np.array(theta0, dtype=complex)
        if forcing is not None and theta0 is None:
            probe = forcing(0.5 * dt)
            if probe.shape != theta.shape:
                theta = np.zeros(probe.shape, dtype=complex)
        hist = [theta.copy()] if record else None
        prev = None
        for n in range(self.n_sub):
            cur = self.apply_K(n, theta)
            F = -cur if prev is None else -(1.5 * cur - 0.5 * prev)
            if forcing is not None:
                F = F + forcing((n + 0.5) * dt)
            theta = st.cn_solve(theta, F)
            prev = cur
            if record:
                hist.append(theta.copy())
        return np.stack(hist) if record else theta

    def dual(self, psi1: np.ndarray, record: bool = True):
        """Backward sweep from ``psi(1) = psi1``; history indexed by substep."""
        st = self.stepper
        psi = np.array(psi1, dtype=complex)
        hist = [psi.copy()]
        prev = None
        for n in range(self.n_sub, 0, -1):
            cur = self.apply_KT(n, psi)
            F = -cur if prev is None else -(1.5 * cur - 0.5 * prev)
            psi = st.cn_solve(psi, F)
            prev = cur
            hist.append(psi.copy())
        hist.reverse()
        return np.stack(hist) if record else hist[0]


def solve_tangent(traj: FrozenTrajectory, zeta, record: bool = True) -> np.ndarray:
    """Tangent path ``theta(t_n)`` (or only ``theta(1)`` without ``record``)."""
    return LinearisedFlow(traj).tangent(zeta, record=record)


def solve_dual(traj: FrozenTrajectory, psi1: np.ndarray) -> np.ndarray:
    """Dual path ``psi(t_n)``, ``n = 0..n_sub``."""
    return LinearisedFlow(traj).dual(psi1)


@dataclass
class DualityResult:
    """Both sides of the duality identity; arrays when the inputs are batched."""

    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    scale: np.ndarray
    lhs_scale: np.ndarray | float = 0.0  # ||theta(1)|| ||psi_1||, for context

    @property
    def absolute(self) -> np.ndarray:
        return np.abs(self.lhs - self.rhs)


def _scalar(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def duality_check(traj: FrozenTrajectory, zeta, psi1: np.ndarray, flow: LinearisedFlow | None = None) -> DualityResult:
    """``(theta(1), psi_1)`` against ``int_0^1 (zeta, psi) dt``.

    The time integral uses the forcing at substep midpoints against the
    average of ``psi`` at the two ends of each substep.  The relative
    residual is normalised by ``int ||zeta|| ||psi|| dt``; ``lhs_scale`` holds the
    other Cauchy-Schwarz scale ``||theta(1)|| ||psi_1||``.  ``zeta`` and
    ``psi1`` may carry one batch axis (pairs are then checked side by side).
    """
    flow = flow if flow is not None else LinearisedFlow(traj)
    sp = flow.space
    forcing = _as_forcing(zeta, sp)
    psi = flow.dual(psi1)
    dt = flow.config.dt
    if forcing is None:
        zero = np.zeros(np.shape(sp.inner(psi1, psi1)))
        return DualityResult(_scalar(zero), _scalar(zero), _scalar(zero), _scalar(zero))
    theta1 = flow.tangent(forcing)
    lhs = sp.inner(theta1, psi1)
    rhs = np.zeros_like(lhs)
    scale = np.zeros_like(lhs)
    for n in range(flow.n_sub):
        z = forcing((n + 0.5) * dt)
        p = 0.5 * (psi[n] + psi[n + 1])
        rhs = rhs + dt * sp.inner(z, p)
        scale = scale + dt * sp.norm(z) * sp.norm(p)
    gap = np.abs(lhs - rhs)
    residual = np.where(scale > 0, gap / np.where(scale > 0, scale, 1.0), gap)
    lhs_scale = sp.norm(theta1) * sp.norm(psi1)
    return DualityResult(_scalar(lhs), _scalar(rhs), _scalar(residual), _scalar(scale), _scalar(lhs_scale))


# -- density diagnostic -----------------------------------------------------


def target_family(space: ModeSpace, d: int) -> np.ndarray:
    """Lowest ``d`` Dirichlet-Fourier products, L2-normalised, ``(d, N, K)``.

    Products ``sigma(x1, x2) sin(pi j x3)`` of real horizontal Fourier
    functions and vertical sines, ordered by the Laplacian eigenvalue
    ``|k|^2 + (pi j)^2``, ties by ``|k|``, ``j`` and then cos before sin.
    """
    g = space.grid
    cands = []
    for i, (k1, k2) in enumerate(zip(space.k1, space.k2)):
        if k2 < 0 or (k2 == 0 and k1 < 0):
            continue
        kinds = ("const",) if k1 == 0 and k2 == 0 else ("cos", "sin")
        for kind in kinds:
            for j in range(1, space.N + 1):
                ksq = k1 * k1 + k2 * k2
                key = (ksq + (np.pi * j) ** 2, ksq, j, -k1, k2, kind != "cos")
                cands.append((key, kind, k1, k2, j))
    cands.sort(key=lambda c: c[0])
    if d > len(cands):
        raise ValueError(f"only {len(cands)} target functions are representable")
    x1, x2, x3 = g.mesh()
    out = []
    for _, kind, k1, k2, j in cands[:d]:
        phase = k1 * x1 + k2 * x2
        horiz = np.ones_like(phase) if kind == "const" else (np.cos(phase) if kind == "cos" else np.sin(phase))
        values = horiz * np.sin(np.pi * j * x3)
        X = space.restrict(values)
        out.append(X / float(space.norm(X)))
    return np.stack(out)


@dataclass
class GramReport:
    singular_values: np.ndarray
    matrix: np.ndarray
    m: int
    d: int

    @property
    def sigma_min(self) -> float:
        return float(self.singular_values[-1]) if len(self.singular_values) else 0.0


def density_diagnostic(
    traj: FrozenTrajectory,
    basis: NoiseBasis,
    m: int,
    d: int,
    block: int = 4,
    flow: LinearisedFlow | None = None,
    workers: int = 1,
) -> GramReport:
    """Singular values of ``[<theta(1; phi_j), e_i>]`` (``d x m``).

    ``theta(1; phi_j)`` is the tangent response to the ``j``-th noise basis
    element; ``e_i`` are the :func:`target_family` functions.
    """
    if m < d:
        raise ValueError(f"need m >= d, got m={m}, d={d}")
    if m > basis.m:
        raise ValueError(f"m = {m} exceeds the basis size {basis.m}")
    flow = flow if flow is not None else LinearisedFlow(traj)
    sp = flow.space
    targets = target_family(sp, d)
    blocks = [np.arange(s, min(s + block, m)) for s in range(0, m, block)]

    def respond(rows):
        coef = np.zeros((len(rows), basis.m))
        coef[np.arange(len(rows)), rows] = 1.0
        return flow.tangent(coefficient_forcing(basis, coef, sp))

    theta = ordered_map(respond, blocks, workers, prepare=flow.prepare)
    responses = [t[:, i] for t in theta for i in range(t.shape[1])]
    G = np.array([[float(sp.inner(e, r)) for r in responses] for e in targets])
    sv = np.linalg.svd(G, compute_uv=False)
    return GramReport(sv, G, m, d)


def ordered_map(fn, items, workers: int = 1, prepare=None) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order kept."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    if prepare is not None:
        prepare()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
