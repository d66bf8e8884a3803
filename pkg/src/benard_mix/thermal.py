"""Time integration of the reduced heat transport over one unit interval.

The stepper evolves the deviation ``S = T - Tbar`` from the conduction
profile on the interior planes, in the dealiased mode layout of
:class:`~benard_mix.grid.ModeSpace`.  Diffusion is Crank-Nicolson (solved
exactly in the vertical sine basis), transport and the buoyancy coupling are
Adams-Bashforth-2 with an Euler first substep, and forcing is sampled at
substep midpoints.  Transport is

    u_h . grad_h S + 1/2 (u3 Dz S + Dz(u3 S) - S Dz u3) + (T_u - T_b) u3,

with ``u = M(S)``; the first two terms are exactly energy-neutral for the
discrete operators.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .grid import (
    Grid,
    ModeSpace,
    ScalarField,
    VectorField,
    h3_seminorm,
    sobolev_norm,
)
from ._kernels import transport_products
from .stokes import SpectralStokes

__all__ = [
    "StepperConfig",
    "CFLViolation",
    "ThermalStepper",
    "FrozenTrajectory",
    "advect",
    "transport",
    "step",
    "integrate_unit_interval",
    "energy_monitor",
]

Forcing = Callable[[float], Optional[np.ndarray]]


@dataclass(frozen=True)
class StepperConfig:
    dt: float = 1.0 / 256
    Ra: float = 1600.0
    T_b: float = 1.0
    T_u: float = 0.0
    cfl_limit: float = 0.5

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        n = 1.0 / self.dt
        if abs(n - round(n)) > 1e-9 * n:
            raise ValueError(f"dt must divide 1 exactly, got {self.dt}")
        if self.Ra < 0:
            raise ValueError(f"Ra must be non-negative, got {self.Ra}")

    @property
    def substeps(self) -> int:
        return int(round(1.0 / self.dt))

    @property
    def jump(self) -> float:
        """``T_u - T_b``, the vertical gradient of the conduction profile."""
        return self.T_u - self.T_b


class CFLViolation(RuntimeError):
    """Raised when the advective CFL number exceeds the configured limit."""

    def __init__(self, cfl: float, limit: float, time: float):
        super().__init__(f"CFL number {cfl:.3f} exceeds {limit} at t = {time:.6f}")
        self.cfl = cfl
        self.limit = limit
        self.time = time


def transport(space: ModeSpace, u, f: np.ndarray, jump: float = 0.0):
    """Dealiased transport ``<u, grad> f`` plus ``jump * u3`` on mode arrays.

    ``u`` is a triple of mode arrays.  The horizontal part is the
    advective product; the vertical part is written as

        1/2 (u3 Dz f + Dz(u3 f) - f Dz u3),

    which for band-limited, discretely divergence-free ``u`` makes the
    whole operator exactly skew-symmetric.  Returns the mode array and the
    per-copy maxima of ``|u_i|`` (shape ``(3, *batch)``).
    """
    sp = space
    g = sp.grid
    u1, u2, u3 = u
    phys = sp.to_physical([u1, u2, u3, 1j * sp.k1 * f, 1j * sp.k2 * f, f], copy=False)
    lead = phys.shape[1:-2]
    flat = phys.reshape((6, lead[0], -1, g.n1, g.n2))
    buf = sp.forward_buffer(lead)
    umax = transport_products(flat, buf.reshape(flat.shape[1:]), 0.25 / g.h)
    out = sp.forward_execute(lead)
    if jump != 0.0:
        out += jump * u3
    return out, umax.reshape((3,) + lead[1:])


class ThermalStepper:
    """Batched IMEX integrator for ``S = T - Tbar`` on the retained modes.

    State arrays have shape ``(n3 - 1, *batch, K)``; batch axes are
    independent copies (chains) advanced together.
    """

    def __init__(self, grid: Grid, config: StepperConfig = StepperConfig(), space: ModeSpace | None = None):
        self.grid = grid
        self.config = config
        self.space = space if space is not None else ModeSpace(grid)
        self.stokes = SpectralStokes(self.space, config.Ra)
        sp, dt = self.space, config.dt
        mu = sp.lam[:, None] - sp.ksq[None, :]
        self._mu = mu
        self._cn_inv = 1.0 / (1.0 - 0.5 * dt * mu)
        self._inv_dx = np.array([grid.n1 / (2 * np.pi), grid.n2 / (2 * np.pi), 1.0 / grid.h])
        self.max_cfl = 0.0

    # -- fields <-> modes ------------------------------------------------
    def from_field(self, T: ScalarField) -> np.ndarray:
        """Mode array of ``T - Tbar`` (walls must carry ``T_b``, ``T_u``)."""
        cfg = self.config
        Tbar = self.grid.conduction(cfg.T_b, cfg.T_u).values
        return self.space.restrict(T.values - Tbar)

    def to_field(self, S: np.ndarray) -> ScalarField:
        cfg = self.config
        Tbar = self.grid.conduction(cfg.T_b, cfg.T_u).values
        return ScalarField(self.grid, self.space.embed(S) + Tbar, cfg.T_b, cfg.T_u)

    # -- operators -------------------------------------------------------
    def transport(self, u, f: np.ndarray, jump: float = 0.0):
        """Dealiased transport ``<u, grad> f + jump * u3``; see :func:`transport`."""
        return transport(self.space, u, f, jump)

    def nonlinear(self, S: np.ndarray):
        """``N(S) = <M(S), grad> S + (T_u - T_b) M3(S)`` and the CFL number."""
        u = self.stokes.velocity(S)
        out, umax = self.transport(u, S, self.config.jump)
        return out, self.cfl(umax)

    def cfl(self, umax: np.ndarray) -> np.ndarray:
        """Per-copy CFL number ``dt * max_i max|u_i| / dx_i``."""
        c = umax * self._inv_dx.reshape((3,) + (1,) * (umax.ndim - 1))
        return self.config.dt * c.max(axis=0)

    def cn_solve(self, S: np.ndarray, F: np.ndarray, dt: float | None = None) -> np.ndarray:
        """``(I - dt/2 L)^-1 [(I + dt/2 L) S + dt F]`` with the discrete Laplacian."""
        sp = self.space
        if dt is None:
            dt = self.config.dt
            inv = self._cn_inv
        else:
            inv = 1.0 / (1.0 - 0.5 * dt * self._mu)
        rhs = S + dt * (0.5 * sp.laplacian(S) + F)
        return sp.symmetrize(sp.sine(sp.sine(rhs) * sp.column(inv, rhs.ndim)))

    # -- integration -----------------------------------------------------
    def run(
        self,
        S0: np.ndarray,
        forcing: Forcing | None = None,
        record: bool = False,
        t0: float = 0.0,
        check_cfl: bool = True,
    ):
        """Advance ``S0`` across one unit interval.

        ``forcing(t)`` returns the mode array of the forcing at local time
        ``t`` in ``[0, 1)`` (called at substep midpoints) or ``None``;
        ``t0`` only labels the interval in diagnostics.  Returns ``(S1, history)``
        where ``history`` stacks every substep when ``record`` is set.
        """
        cfg = self.config
        n_sub, dt = cfg.substeps, cfg.dt
        S = np.array(S0, dtype=complex)
        history = [S.copy()] if record else None
        N_prev = None
        for n in range(n_sub):
            N_cur, cfl = self.nonlinear(S)
            if check_cfl:
                c = float(np.max(cfl))
                self.max_cfl = max(self.max_cfl, c)
                if not np.isfinite(c) or c > cfg.cfl_limit:
                    raise CFLViolation(c, cfg.cfl_limit, t0 + n * dt)
            if N_prev is None:
                F = -N_cur
            else:
                F = -(1.5 * N_cur - 0.5 * N_prev)
            if forcing is not None:
                eta = forcing((n + 0.5) * dt)
                if eta is not None:
                    F = F + eta
            S = self.cn_solve(S, F)
            N_prev = N_cur
            if record:
                history.append(S.copy())
        if not np.all(np.isfinite(S)):
            raise FloatingPointError("non-finite temperature after unit interval")
        return S, (np.stack(history) if record else None)


@dataclass
class FrozenTrajectory:
    """Temperature deviation at every substep of one unit interval.

    Velocities are not stored; ``velocity(n)`` recomputes ``M(T)`` from the
    stored temperature, which is bit-identical to what the stepper used.
    """

    stepper: ThermalStepper
    modes: np.ndarray  # (n_sub + 1, ..., N, K)
    t0: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def times(self) -> np.ndarray:
        n = self.modes.shape[0] - 1
        return self.t0 + np.arange(n + 1) / n

    def __len__(self) -> int:
        return self.modes.shape[0]

    def temperature(self, n: int) -> ScalarField:
        return self.stepper.to_field(self.modes[n])

    def velocity_modes(self, n: int):
        return self.stepper.stokes.velocity(self.modes[n])

    def velocity(self, n: int) -> VectorField:
        sp = self.stepper.space
        return VectorField(self.stepper.grid, *(sp.embed(c) for c in self.velocity_modes(n)))


def advect(u: VectorField, T: ScalarField) -> ScalarField:
    """Dealiased transport ``<u, grad> T`` on full-layout fields.

    ``T`` is split into its linear boundary profile plus a part vanishing on
    the walls; the profile contributes ``(top - bottom) u3`` exactly.  The
    rest uses the same discrete form as the time stepper.
    """
    g = T.grid
    sp = ModeSpace(g)
    profile = T.bottom + g.x3[:, None, None] * (T.top - T.bottom)
    S = sp.restrict(T.values - profile)
    modes = tuple(sp.restrict(c) for c in u.components)
    out, _ = transport(sp, modes, S, T.top - T.bottom)
    return ScalarField(g, sp.embed(out))


def step(
    T: ScalarField,
    eta: ScalarField | None,
    dt: float,
    Ra: float = StepperConfig.Ra,
    previous: np.ndarray | None = None,
) -> tuple[ScalarField, np.ndarray]:
    """One IMEX substep on full-layout fields.

    Boundary values are taken from ``T`` and held exactly.  ``previous`` is
    the transport term of the preceding substep (Euler when ``None``);
    the current transport term is returned for chaining.
    """
    cfg = StepperConfig(dt=dt, Ra=Ra, T_b=T.bottom, T_u=T.top)
    stepper = ThermalStepper(T.grid, cfg)
    S = stepper.from_field(T)
    N_cur, cfl = stepper.nonlinear(S)
    c = float(np.max(cfl))
    if c > cfg.cfl_limit:
        raise CFLViolation(c, cfg.cfl_limit, 0.0)
    F = -N_cur if previous is None else -(1.5 * N_cur - 0.5 * previous)
    if eta is not None:
        F = F + stepper.space.restrict(eta.values)
    return stepper.to_field(stepper.cn_solve(S, F)), N_cur


def integrate_unit_interval(
    T0: ScalarField,
    noise=None,
    config: StepperConfig = StepperConfig(),
    record: bool = False,
    stepper: ThermalStepper | None = None,
):
    """The time-one map ``T1 = S(T0, eta)``.

    ``noise`` is a :class:`~benard_mix.noise.NoiseSample` (or any callable
    returning mode arrays) or ``None``.  Returns ``(T1, trajectory)``, the
    trajectory being ``None`` unless ``record`` is set.
    """
    if stepper is None:
        stepper = ThermalStepper(T0.grid, config)
    forcing = None
    if noise is not None:
        forcing = noise.forcing(stepper.space) if hasattr(noise, "forcing") else noise
    S1, hist = stepper.run(stepper.from_field(T0), forcing, record=record)
    traj = FrozenTrajectory(stepper, hist) if record else None
    return stepper.to_field(S1), traj


def energy_monitor(traj: FrozenTrajectory) -> dict[str, np.ndarray]:
    """Time series of ``||S||``, ``||grad S||``, ``||T||_{H1}`` and ``|T|_{H3}``.

    The H3 value is a repeated-difference diagnostic of low accuracy, useful
    only for watching boundedness.
    """
    st = traj.stepper
    g = st.grid
    rows = {"time": traj.times, "S_L2": [], "grad_S": [], "T_H1": [], "T_H3": []}
    cfg = st.config
    Tbar = g.conduction(cfg.T_b, cfg.T_u).values
    for n in range(len(traj)):
        S = st.space.embed(traj.modes[n])
        s0 = float(sobolev_norm(S, 0, g))
        s1 = float(sobolev_norm(S, 1, g))
        rows["S_L2"].append(s0)
        rows["grad_S"].append(np.sqrt(max(s1**2 - s0**2, 0.0)))
        rows["T_H1"].append(float(sobolev_norm(S + Tbar, 1, g)))
        rows["T_H3"].append(float(h3_seminorm(ScalarField(g, S + Tbar))))
    return {k: np.asarray(v) for k, v in rows.items()}
