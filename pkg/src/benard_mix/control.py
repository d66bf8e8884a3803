"""Constructive control towards a horizontally uniform target profile.

Writing ``T = chi + v`` with a profile ``chi`` that equals ``T_b`` near the
bottom and ``T_u`` above ``eps2 < c``, the buoyancy of ``chi`` is a pure
gradient, so ``M(chi) = 0``.  The projected system

    d_t v - lap v + <M(v), grad> v + (I - Pi_l)(M3(v) chi') = (I - Pi_l) chi''

is solved by driving the full temperature equation with the admissible
forcing ``eta = Pi_l(M3(v) chi' - chi'')``; ``Pi_l`` projects each unit
interval onto the first ``l`` noise basis elements in the E inner product.
Because the projection needs the whole interval, each interval is integrated
several times, each pass using the forcing projected from the previous one
(a predictor-corrector fixed point).

Here ``M3(v) chi'`` is the discrete transport of ``chi`` by ``M(v)``, the
same discretisation the stepper applies to the temperature, so driving the
full system with the synthesised forcing reproduces ``v`` up to the
fixed-point tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, ModeSpace
from .noise import NoiseBasis, coefficient_forcing
from .thermal import StepperConfig, ThermalStepper

__all__ = [
    "TargetProfile",
    "ProjectionOperator",
    "ControlSequence",
    "PeriodicSolution",
    "ControlledSystem",
    "build_chi",
    "smoothstep",
    "random_deviation",
    "select_l",
]


def smoothstep(z: np.ndarray, derivative: int = 0) -> np.ndarray:
    """Quintic ``6z^5 - 15z^4 + 10z^3`` clamped to [0, 1], C2 at both ends."""
    z = np.clip(z, 0.0, 1.0)
    if derivative == 0:
        return z**3 * (10 - 15 * z + 6 * z**2)
    if derivative == 1:
        return 30 * z**2 * (1 - z) ** 2
    if derivative == 2:
        return 60 * z * (1 - z) * (1 - 2 * z)
    raise ValueError("derivative must be 0, 1 or 2")


@dataclass(frozen=True)
class TargetProfile:
    """Profile ``chi(x3)`` with exact plateaus and its derivatives on grid planes."""

    grid: Grid
    T_b: float
    T_u: float
    eps1: float
    eps2: float
    chi: np.ndarray
    dchi: np.ndarray
    d2chi: np.ndarray

    def deviation(self) -> np.ndarray:
        """``chi - Tbar`` on all planes (zero on the walls)."""
        g = self.grid
        out = self.chi - (self.T_b + g.x3 * (self.T_u - self.T_b))
        out[0] = out[-1] = 0.0
        return out

    def deviation_modes(self, space: ModeSpace) -> np.ndarray:
        """``chi - Tbar`` as a mode array (only the ``k = 0`` column is set)."""
        X = space.zeros()
        X[:, _zero_mode(space)] = self.deviation()[1:-1]
        return X


def _zero_mode(space: ModeSpace) -> int:
    return int(np.nonzero(space.ksq == 0)[0][0])


def build_chi(T_b: float, T_u: float, eps1: float, eps2: float, grid: Grid) -> TargetProfile:
    """Target profile joining ``T_b`` (below ``eps1``) to ``T_u`` (above ``eps2``)."""
    if not 0 < eps1 < eps2 < grid.c:
        raise ValueError(f"need 0 < eps1 < eps2 < c, got eps1={eps1}, eps2={eps2}, c={grid.c}")
    w = eps2 - eps1
    z = (grid.x3 - eps1) / w
    jump = T_u - T_b
    chi = T_b + jump * smoothstep(z)
    chi[grid.x3 <= eps1] = T_b
    chi[grid.x3 >= eps2] = T_u
    dchi = jump * smoothstep(z, 1) / w
    d2chi = jump * smoothstep(z, 2) / w**2
    return TargetProfile(grid, T_b, T_u, eps1, eps2, chi, dchi, d2chi)


def random_deviation(space: ModeSpace, h1: float, rng: np.random.Generator, decay: float = 1.0) -> np.ndarray:
    """Random real mode array with H1 norm ``h1``.

    Gaussian coefficients damped by ``(1 + |k|^2 + (pi j)^2)^(-decay)`` with
    ``j`` the vertical sine index; ``decay = 0`` gives a white spectrum.
    """
    N, K = space.N, space.K
    j = np.arange(1, N + 1)[:, None]
    damp = (1.0 + space.ksq[None, :] + (np.pi * j) ** 2) ** (-decay)
    coef = (rng.standard_normal((N, K)) + 1j * rng.standard_normal((N, K))) * damp
    X = space.symmetrize(space.sine(coef))
    X[:, _zero_mode(space)] = X[:, _zero_mode(space)].real
    return X * (h1 / float(space.h1_norm(X)))


# -- projection -------------------------------------------------------------


class ProjectionOperator:
    """E-orthogonal projection onto ``span{phi_1..phi_l}`` for one interval.

    Space-time fields are given by their values and time derivatives at the
    substep midpoints, arrays ``(n_sub, N, K)``; the discrete E product is
    the one used to orthonormalise the basis.
    """

    def __init__(self, basis: NoiseBasis, space: ModeSpace, l: int):
        if l > basis.m:
            raise ValueError(f"l = {l} exceeds the basis size m = {basis.m}")
        if l < 0:
            raise ValueError("l must be non-negative")
        self.basis = basis
        self.space = space
        self.l = int(l)
        g = space.grid
        R = basis.raw_modes(space)[: self.l]  # (l, N, K)
        LR = np.moveaxis(space.laplacian(np.moveaxis(R, 0, 1)), 1, 0)
        scale = g.area * g.h * space.weights
        self._R = (R * scale).reshape(self.l, -1).conj()
        self._LR = (LR * scale).reshape(self.l, -1).conj()
        self._lap = lambda X: space.laplacian(X)
        t = basis.times
        p_of = np.array([p for p, _, _ in basis.triples[: self.l]], dtype=int)
        self._tau = basis.time_table(t)[p_of] if self.l else np.zeros((0, len(t)))
        self._dtau = basis.time_table(t, derivative=True)[p_of] if self.l else np.zeros((0, len(t)))
        self._dt = 1.0 / basis.config.n_substeps
        self._F = basis.factor[: self.l, : self.l]

    def raw_products(self, values: np.ndarray, derivs: np.ndarray) -> np.ndarray:
        """``<f, raw_i>_E`` for the first ``l`` raw products."""
        n_t = values.shape[0]
        flat = values.reshape(n_t, -1)
        lap = np.moveaxis(self._lap(np.moveaxis(values, 0, 1)), 1, 0).reshape(n_t, -1)
        P = (flat @ self._R.T).real + (lap @ self._LR.T).real
        D = (derivs.reshape(n_t, -1) @ self._R.T).real
        return self._dt * (np.einsum("in,ni->i", self._tau, P) + np.einsum("in,ni->i", self._dtau, D))

    def coefficients(self, values: np.ndarray, derivs: np.ndarray) -> np.ndarray:
        """Coefficients ``<f, phi_j>_E``, ``j < l``."""
        if self.l == 0:
            return np.zeros(0)
        return self._F @ self.raw_products(values, derivs)

    def from_nodes(self, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Midpoint values and differences of a field sampled at substep nodes."""
        return 0.5 * (nodes[1:] + nodes[:-1]), (nodes[1:] - nodes[:-1]) / self._dt

    def basis_values(self, coef: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact midpoint values and time derivatives of ``sum coef_j phi_j``."""
        full = np.zeros(self.basis.m)
        full[: len(coef)] = coef
        d = self.basis.space_time_coefficients(full)
        R = self.basis.raw_modes(self.space)
        t = self.basis.times
        p_of = np.array([p for p, _, _ in self.basis.triples])
        tau = self.basis.time_table(t)[p_of]
        dtau = self.basis.time_table(t, derivative=True)[p_of]
        vals = np.einsum("i,in,iNK->nNK", d, tau, R)
        ders = np.einsum("i,in,iNK->nNK", d, dtau, R)
        return vals, ders

    def forcing(self, coef: np.ndarray):
        """Stepper forcing for ``sum_{j<l} coef_j phi_j``."""
        full = np.zeros(self.basis.m)
        full[: len(coef)] = coef
        return coefficient_forcing(self.basis, full, self.space)


# -- controlled system ------------------------------------------------------


@dataclass
class ControlSequence:
    """Per-interval coefficients of ``zeta_k`` against ``phi_1..phi_l``."""

    coefficients: list[np.ndarray]
    l: int
    corrector_increments: list[list[float]] = field(default_factory=list)

    @property
    def norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(c) for c in self.coefficients])

    def admissible_amplitude(self, b: np.ndarray) -> float:
        """Smallest ``a`` with ``|coef_j| <= a b_j`` for every interval."""
        if not self.coefficients or self.l == 0:
            return 0.0
        return float(max(np.max(np.abs(c) / b[: self.l]) for c in self.coefficients))


@dataclass
class PeriodicSolution:
    """One period of ``vbar`` (as stepper deviations) and its control."""

    start: np.ndarray
    coefficients: np.ndarray
    residual: float
    ratios: list[float]
    iterations: int
    converged: bool


class ControlledSystem:
    """Projected system and control synthesis for a fixed ``l``."""

    def __init__(
        self,
        grid: Grid,
        config: StepperConfig,
        basis: NoiseBasis,
        target: TargetProfile,
        l: int,
        stepper: ThermalStepper | None = None,
        max_passes: int = 8,
        pass_tol: float = 1e-6,
    ):
        self.grid = grid
        self.config = config
        self.stepper = stepper if stepper is not None else ThermalStepper(grid, config)
        self.space = self.stepper.space
        self.basis = basis
        self.target = target
        self.projection = ProjectionOperator(basis, self.space, l)
        self.l = int(l)
        self.max_passes = max_passes
        self.pass_tol = pass_tol
        sp = self.space
        self._chi_dev = target.deviation_modes(sp)
        self._d2chi = sp.laplacian(self._chi_dev)  # discrete chi'' (the stepper's)
        dev = target.deviation()
        self._gdiff = np.diff(dev) / (4 * grid.h)  # (g_{j+1} - g_j)/(4h), j = 0..n3-1

    # -- the discrete M3(v) chi' ------------------------------------------
    def profile_transport(self, u3: np.ndarray) -> np.ndarray:
        """Transport of ``chi`` by a velocity with vertical part ``u3``.

        Equals the stepper's transport of ``chi - Tbar`` plus its
        ``(T_u - T_b) u3`` term, evaluated per mode.
        """
        up = self._gdiff[1:, None]
        dn = self._gdiff[:-1, None]
        up = up.reshape((-1,) + (1,) * (u3.ndim - 1))
        dn = dn.reshape((-1,) + (1,) * (u3.ndim - 1))
        s_up = u3.copy()
        s_up[:-1] += u3[1:]
        s_dn = u3.copy()
        s_dn[1:] += u3[:-1]
        return s_up * up + s_dn * dn + self.config.jump * u3

    def control_field(self, S: np.ndarray) -> np.ndarray:
        """``M3(v) chi' - chi''`` for stepper deviations ``S`` (any leading axes)."""
        lead = S.shape[:-2]
        flat = S.reshape((-1,) + S.shape[-2:])
        out = np.empty_like(flat)
        for n in range(flat.shape[0]):
            u3 = self.stepper.stokes.vertical_velocity(flat[n])
            out[n] = self.profile_transport(u3) - self._d2chi
        return out.reshape(lead + S.shape[-2:])

    # -- one unit interval ------------------------------------------------
    def interval(self, S0: np.ndarray, guess: np.ndarray | None = None, t0: float = 0.0):
        """Integrate one unit interval of the projected system.

        Returns ``(S1, coef, increments)``: the end state, the control
        coefficients, and the relative change of the end state per pass.
        """
        coef = np.zeros(self.l) if guess is None else np.asarray(guess, dtype=float)
        increments = []
        S_prev = None
        for _ in range(self.max_passes):
            S1, hist = self.stepper.run(S0, self.projection.forcing(coef), record=True, t0=t0, check_cfl=False)
            vals, ders = self.projection.from_nodes(self.control_field(hist))
            coef = self.projection.coefficients(vals, ders)
            if S_prev is not None:
                scale = max(float(self.space.h1_norm(S1)), 1e-300)
                increments.append(float(self.space.h1_norm(S1 - S_prev)) / scale)
                if increments[-1] <= self.pass_tol:
                    break
            S_prev = S1
        # final pass with the converged control, so state and control agree
        S1, _ = self.stepper.run(S0, self.projection.forcing(coef), t0=t0)
        if S_prev is not None:
            scale = max(float(self.space.h1_norm(S1)), 1e-300)
            increments.append(float(self.space.h1_norm(S1 - S_prev)) / scale)
        return S1, coef, increments

    def solve_projected_system(self, v0: np.ndarray, K: int):
        """Trajectory of ``v`` at integer times from ``v0`` (mode array, zero walls)."""
        S = v0 + self._chi_dev
        states = [v0.copy()]
        coefs, incs = [], []
        guess = None
        for k in range(K):
            S, coef, inc = self.interval(S, guess, t0=float(k))
            guess = coef
            states.append(S - self._chi_dev)
            coefs.append(coef)
            incs.append(inc)
        return np.stack(states), ControlSequence(coefs, self.l, incs)

    def find_periodic_solution(self, tol: float = 1e-8, max_iter: int = 60) -> PeriodicSolution:
        """Iterate the time-one map from ``v = 0`` to the 1-periodic solution."""
        sp = self.space
        v = sp.zeros()
        guess = None
        ratios, last = [], None
        residual = np.inf
        for it in range(1, max_iter + 1):
            S1, coef, _ = self.interval(v + self._chi_dev, guess)
            v_new = S1 - self._chi_dev
            residual = float(sp.h1_norm(v_new - v))
            if last is not None and last > 0:
                ratios.append(residual / last)
            last = residual
            v, guess = v_new, coef
            if residual <= tol:
                S1, coef, _ = self.interval(v + self._chi_dev, guess)
                return PeriodicSolution(v, coef, residual, ratios, it, True)
            if len(ratios) >= 4 and min(ratios[-3:]) > 1.0:
                break
        return PeriodicSolution(v, guess, residual, ratios, it, False)

    def target_deviation(self, periodic: PeriodicSolution) -> np.ndarray:
        """``That - Tbar`` with ``That = chi + vbar(0)``."""
        return periodic.start + self._chi_dev

    def synthesize_control(self, S0: np.ndarray, n: int, periodic: PeriodicSolution | None = None):
        """Controls ``zeta_1..zeta_n`` steering ``T0 = Tbar + S0`` towards the target."""
        v0 = S0 - self._chi_dev
        states, seq = self.solve_projected_system(v0, n)
        return seq, states

    def drive(self, S0: np.ndarray, controls: ControlSequence) -> np.ndarray:
        """Full system driven by the given controls; end deviations at integer times."""
        S = np.array(S0, dtype=complex)
        out = [S.copy()]
        for k, coef in enumerate(controls.coefficients):
            S, _ = self.stepper.run(S, self.projection.forcing(coef), t0=float(k))
            out.append(S.copy())
        return np.stack(out)

    def verify_property_C(self, S0: np.ndarray, n: int, periodic: PeriodicSolution):
        """Contraction ratio ``||S^n(T0) - That|| / ||T0 - That||`` in H1.

        Returns ``(ratio, details)``; ``details`` carries the controls, the
        consistency gap between the driven system and ``v``, and the
        absolute distances.
        """
        sp = self.space
        target = self.target_deviation(periodic)
        seq, states = self.synthesize_control(S0, n, periodic)
        driven = self.drive(S0, seq)
        consistency = max(
            float(sp.h1_norm((driven[k] - self._chi_dev) - states[k])) for k in range(len(driven))
        )
        d0 = float(sp.h1_norm(S0 - target))
        dn = float(sp.h1_norm(driven[-1] - target))
        ratio = dn / d0 if d0 > 0 else 0.0
        return ratio, {
            "controls": seq,
            "consistency": consistency,
            "initial_distance": d0,
            "final_distance": dn,
            "distances": [float(sp.h1_norm(s - target)) for s in driven],
        }


def select_l(
    grid: Grid,
    config: StepperConfig,
    basis: NoiseBasis,
    target: TargetProfile,
    l_max: int | None = None,
    max_ratio: float = 0.9,
    stepper: ThermalStepper | None = None,
    tol: float = 1e-8,
) -> tuple[ControlledSystem, PeriodicSolution, list[dict]]:
    """Smallest ``l`` whose periodic-solution iteration contracts.

    An ``l`` is accepted when the iteration converges and every observed
    step ratio is at most ``max_ratio``.  Returns the system, its periodic
    solution and one record per ``l`` tried.
    """
    l_max = basis.m if l_max is None else min(int(l_max), basis.m)
    tried = []
    for l in range(1, l_max + 1):
        system = ControlledSystem(grid, config, basis, target, l, stepper=stepper)
        periodic = system.find_periodic_solution(tol=tol)
        worst = max(periodic.ratios) if periodic.ratios else 0.0
        tried.append({"l": l, "converged": periodic.converged, "max_ratio": float(worst),
                      "iterations": periodic.iterations, "residual": float(periodic.residual)})
        if periodic.converged and worst <= max_ratio:
            return system, periodic, tried
    raise RuntimeError(f"no l <= {l_max} gives a contracting periodic iteration: {tried}")
