"""The Markov chain ``T_k = S(T_{k-1}, eta_k)`` and experiments on it.

Chains are advanced in fixed blocks of a few copies at a time: small
batches keep the working set in cache, and because a chain's block depends
only on its id, results do not depend on how blocks are spread over
workers.  All reductions over chains sort their inputs first, so estimates
are invariant under permutations of the chains.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .control import random_deviation
from .grid import Grid, ModeSpace, ScalarField, fft_workers
from .noise import NoiseBasis, NoiseConfig, build_basis, coefficient_forcing, sample_xi, xi_stream
from .thermal import CFLViolation, StepperConfig, ThermalStepper

__all__ = [
    "ChainModel",
    "ChainState",
    "ObservableDictionary",
    "EnsembleResult",
    "DecayFit",
    "MixingReport",
    "DissipativityReport",
    "advance_chain",
    "run_ensemble",
    "estimate_dual_lipschitz",
    "fit_decay_rate",
    "coupling_experiment",
    "calibrate_ball",
    "dissipativity_experiment",
    "mixing_experiment",
    "ordered_sum",
]

BLOCK = 4


def ordered_sum(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum along ``axis`` after sorting, so the result ignores input order."""
    return np.sum(np.sort(values, axis=axis), axis=axis)


class ChainModel:
    """Everything needed to advance chains: stepper, noise basis, seed."""

    def __init__(
        self,
        grid: Grid,
        stepper_config: StepperConfig,
        noise_config: NoiseConfig,
        basis: NoiseBasis | None = None,
    ):
        self.grid = grid
        self.stepper_config = stepper_config
        self.noise_config = noise_config
        self.basis = basis if basis is not None else build_basis(noise_config, grid)
        self._main = ThermalStepper(grid, stepper_config)
        self.space = self._main.space
        self._steppers: dict[int, ThermalStepper] = {}

    @property
    def stepper(self) -> ThermalStepper:
        return self._main

    def stepper_for(self, worker: int) -> ThermalStepper:
        """One stepper per worker thread (steppers carry a CFL monitor)."""
        if worker == 0:
            return self._main
        if worker not in self._steppers:
            self._steppers[worker] = ThermalStepper(self.grid, self.stepper_config, self.space)
        return self._steppers[worker]

    def xi(self, chains, k: int) -> np.ndarray:
        """Coefficient draws ``(len(chains), m)`` for step ``k`` (k >= 1)."""
        m = self.basis.m
        return np.stack([sample_xi(xi_stream(self.noise_config.seed, c, k), m) for c in chains])

    def forcing(self, chains, k: int, scale: float | None = None):
        """Batched forcing of step ``k`` for the given chain ids."""
        cfg = self.noise_config
        a = cfg.a if scale is None else scale
        if a == 0.0:
            return None
        coef = a * cfg.b * self.xi(chains, k)
        return coefficient_forcing(self.basis, coef, self.space)

    def advance(self, S: np.ndarray, chains, k: int, worker: int = 0) -> np.ndarray:
        """Advance a block ``(N, B, K)`` from step ``k - 1`` to ``k``."""
        st = self.stepper_for(worker)
        S1, _ = st.run(S, self.forcing(chains, k), t0=float(k - 1))
        return S1

    def advance_refined(self, S: np.ndarray, chains, k: int, max_level: int = 10) -> tuple[np.ndarray, int]:
        """Like :meth:`advance`, halving ``dt`` for this interval until the
        CFL limit holds.  Returns the state and the refinement level used."""
        forcing = self.forcing(chains, k)
        for level in range(max_level + 1):
            st = self._refined(level)
            try:
                S1, _ = st.run(S, forcing, t0=float(k - 1))
                return S1, level
            except CFLViolation:
                if level == max_level:
                    raise
        raise AssertionError("unreachable")

    def _refined(self, level: int) -> ThermalStepper:
        if level == 0:
            return self._main
        key = -level  # negative keys never collide with worker ids
        if key not in self._steppers:
            cfg = replace(self.stepper_config, dt=self.stepper_config.dt / 2**level)
            self._steppers[key] = ThermalStepper(self.grid, cfg, self.space)
        return self._steppers[key]

    @property
    def max_cfl(self) -> float:
        return max([self._main.max_cfl] + [s.max_cfl for s in self._steppers.values()])


@dataclass
class ChainState:
    """Chain position: deviation modes ``S = T - Tbar``, step, stream key."""

    S: np.ndarray
    k: int
    seed: int
    chain: int = 0

    def temperature(self, model: ChainModel) -> ScalarField:
        return model.stepper.to_field(self.S)


def advance_chain(state: ChainState, model: ChainModel) -> ChainState:
    """One step of the chain with a fresh noise sample."""
    if state.seed != model.noise_config.seed:
        raise ValueError("chain seed differs from the model's noise seed")
    S = model.advance(state.S[:, None, :], [state.chain], state.k + 1)[:, 0, :]
    return ChainState(S, state.k + 1, state.seed, state.chain)


# -- observables ------------------------------------------------------------


class ObservableDictionary:
    """Bounded Lipschitz functionals ``f_i(T) = tanh(<g_i, T - Tbar> / s_i)``.

    ``|<g, S>| <= ||g|| ||S|| <= ||g|| ||S||_{H1}``, so ``s_i = ||g_i||``
    makes every ``f_i`` 1-Lipschitz in H1; each is bounded by 1.  The
    profiles are smooth random fields drawn from a fixed seed.
    """

    def __init__(self, space: ModeSpace, n: int = 32, seed: int = 20240601, decay: float = 1.0):
        rng = np.random.default_rng(seed)
        g = np.stack([random_deviation(space, 1.0, rng, decay) for _ in range(n)])
        self.space = space
        self.profiles = g  # (n, N, K)
        self.scales = np.array([float(space.norm(p)) for p in g])
        grid = space.grid
        w = grid.area * grid.h * space.weights
        self._G = (g.conj() * w).reshape(n, -1)

    def __len__(self) -> int:
        return len(self.scales)

    def linear(self, S: np.ndarray) -> np.ndarray:
        """``<g_i, S>`` for ``S`` of shape ``(N, *batch, K)`` -> ``(*batch, n)``."""
        N, K = self.space.N, self.space.K
        batch = S.shape[1:-1]
        flat = np.moveaxis(S, 0, -2).reshape(batch + (N * K,))
        return (flat @ self._G.T).real

    def __call__(self, S: np.ndarray) -> np.ndarray:
        return np.tanh(self.linear(S) / self.scales)


def estimate_dual_lipschitz(A: np.ndarray, B: np.ndarray) -> float:
    """Dictionary lower estimate ``max_i |mean_A f_i - mean_B f_i|``.

    ``A`` and ``B`` are ``(n_chains, n_observables)`` observable values.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise ValueError("empty ensemble")
    gap = ordered_sum(A) / A.shape[0] - ordered_sum(B) / B.shape[0]
    return float(np.max(np.abs(gap)))


# -- ensembles --------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Observable values ``(n_chains, K, n_obs)`` at steps ``1..K``."""

    values: np.ndarray
    initial: np.ndarray
    h1: np.ndarray  # (n_chains, K + 1)
    final: np.ndarray  # (N, n_chains, K) deviation modes at step K
    snapshots: np.ndarray | None = None
    max_cfl: float = 0.0

    def at(self, k: int) -> np.ndarray:
        return self.initial if k == 0 else self.values[:, k - 1]


def _blocks(n_chains: int, block: int):
    return [list(range(s, min(s + block, n_chains))) for s in range(0, n_chains, block)]


def run_ensemble(
    model: ChainModel,
    S0: np.ndarray,
    n_chains: int,
    K: int,
    observables: ObservableDictionary,
    workers: int | None = None,
    snapshots: bool = False,
    block: int = BLOCK,
) -> EnsembleResult:
    """Independent chains from a common (or per-chain) initial state.

    ``S0`` is ``(N, K)`` (shared) or ``(N, n_chains, K)``.  Chain ``c`` uses
    the noise stream keyed on ``(seed, c, k)``.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    workers = fft_workers() if workers is None else max(1, int(workers))
    sp = model.space
    if S0.ndim == 2:
        S0 = np.broadcast_to(S0[:, None, :], (sp.N, n_chains, sp.K))
    blocks = _blocks(n_chains, block)
    n_obs = len(observables)
    values = np.empty((n_chains, K, n_obs))
    h1 = np.empty((n_chains, K + 1))
    final = np.empty((sp.N, n_chains, sp.K), dtype=complex)
    snaps = np.empty((K + 1, sp.N, n_chains, sp.K), dtype=complex) if snapshots else None

    def work(item):
        idx, chains = item
        worker = idx % workers
        S = np.array(S0[:, chains[0] : chains[-1] + 1, :], dtype=complex)
        if snaps is not None:
            snaps[0][:, chains] = S
        h1[chains, 0] = model.space.h1_norm(S)
        for k in range(1, K + 1):
            S = model.advance(S, chains, k, worker)
            values[chains, k - 1] = observables(S)
            h1[chains, k] = model.space.h1_norm(S)
            if snaps is not None:
                snaps[k][:, chains] = S
        final[:, chains] = S

    items = list(enumerate(blocks))
    if workers == 1:
        for item in items:
            work(item)
    else:
        # workers own disjoint block sets; each writes only its own rows
        def run_worker(w):
            for item in items[w::workers]:
                work(item)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_worker, range(workers)))
    initial = observables(np.asarray(S0))
    return EnsembleResult(values, initial, h1, final, snaps, model.max_cfl)


# -- rate fitting -----------------------------------------------------------


@dataclass
class DecayFit:
    gamma: float
    C: float
    r2: float
    steps: np.ndarray
    excluded: list[int] = field(default_factory=list)


def fit_decay_rate(d: np.ndarray, window: tuple[int, int] | None = None, steps: np.ndarray | None = None) -> DecayFit:
    """Least squares of ``log d_k = log C - gamma k`` over ``window`` (inclusive).

    ``steps`` gives the ``k`` of each entry (default ``0..len(d)-1``).
    Non-positive entries are excluded and listed.
    """
    d = np.asarray(d, dtype=float)
    k = np.arange(len(d)) if steps is None else np.asarray(steps)
    sel = np.ones(len(d), dtype=bool)
    if window is not None:
        sel &= (k >= window[0]) & (k <= window[1])
    excluded = [int(x) for x in k[sel & ~(d > 0)]]
    sel &= d > 0
    if sel.sum() < 2:
        raise ValueError("need at least two positive entries in the fit window")
    x, y = k[sel].astype(float), np.log(d[sel])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(np.exp(intercept)), r2, k[sel], excluded)


# -- experiments ------------------------------------------------------------


def coupling_experiment(model: ChainModel, S0_a: np.ndarray, S0_b: np.ndarray, K: int, chain: int = 0) -> np.ndarray:
    """``||T_k^a - T_k^b||_{H1}``, ``k = 0..K``, both driven by the same noise."""
    sp = model.space
    S = np.stack([S0_a, S0_b], axis=1).astype(complex)
    out = [float(sp.h1_norm(S[:, 0] - S[:, 1]))]
    for k in range(1, K + 1):
        f = model.forcing([chain], k)
        st = model.stepper
        S, _ = st.run(S, f, t0=float(k - 1))
        out.append(float(sp.h1_norm(S[:, 0] - S[:, 1])))
    return np.array(out)


def calibrate_ball(model: ChainModel, burn_in: int = 10, n_chains: int = 4, factor: float = 2.0) -> float:
    """Absorbing-ball radius: ``factor`` times the largest deviation H1 norm seen
    over a burn-in from the conduction state."""
    sp = model.space
    S = sp.zeros((n_chains,))
    chains = list(range(n_chains))
    peak = 0.0
    for k in range(1, burn_in + 1):
        S = model.advance(S, chains, k)
        peak = max(peak, float(np.max(sp.h1_norm(S))))
    return factor * peak


@dataclass
class DissipativityReport:
    radii: list[float]
    ball: float
    entry_times: list[int | None]
    slope: float
    intercept: float
    norms: list[list[float]]
    refinement: list[list[int]] = field(default_factory=list)


def dissipativity_experiment(
    model: ChainModel,
    radii,
    ball: float | None = None,
    budget: int = 60,
    seed: int = 7,
    chain: int = 0,
) -> DissipativityReport:
    """First step at which a chain started at deviation norm ``R`` enters the ball.

    Initial deviations have a white spectrum, scaled to H1 norm ``R``; all
    runs share the noise of ``chain``.  Large data violate the CFL limit of
    the default step, so each unit interval is integrated with the largest
    ``dt / 2^j`` that respects it (recorded in ``refinement``).  The entry
    times are regressed on ``ln(R + 2)``.
    """
    sp = model.space
    if ball is None:
        ball = calibrate_ball(model)
    rng = np.random.default_rng(seed)
    times, norms, refinement = [], [], []
    for R in radii:
        S = random_deviation(sp, float(R), rng, decay=0.0)[:, None, :]
        series = [float(R)]
        entry = 0 if R <= ball else None
        k = 0
        levels = []
        while entry is None and k < budget:
            k += 1
            S, level = model.advance_refined(S, [chain], k)
            levels.append(level)
            series.append(float(sp.h1_norm(S[:, 0])))
            if series[-1] <= ball:
                entry = k
        times.append(entry)
        norms.append(series)
        refinement.append(levels)
    ok = [(np.log(R + 2), t) for R, t in zip(radii, times) if t is not None]
    if len(ok) >= 2 and len({x for x, _ in ok}) >= 2:
        slope, intercept = np.polyfit(*zip(*ok), 1)
    else:
        slope, intercept = float("nan"), float("nan")
    return DissipativityReport(
        list(map(float, radii)), float(ball), times, float(slope), float(intercept), norms, refinement
    )


@dataclass
class MixingReport:
    distances: np.ndarray  # d_k, k = 0..K
    fit: DecayFit
    n_chains: tuple[int, int]
    window: tuple[int, int]
    coupling: np.ndarray | None = None
    coupling_fit: DecayFit | None = None
    max_cfl: float = 0.0

    @property
    def gamma(self) -> float:
        return self.fit.gamma


def mixing_experiment(
    model: ChainModel,
    S0_a: np.ndarray,
    S0_b: np.ndarray,
    n_chains: int,
    K: int,
    observables: ObservableDictionary,
    window: tuple[int, int] = (5, 25),
    workers: int | None = None,
    coupling: bool = True,
) -> MixingReport:
    """Dictionary distance between two ensembles, step by step, and its decay rate.

    Both ensembles use the same stream keys (chain ``c`` of either ensemble
    sees the noise of chain ``c``).  Each ensemble is still an i.i.d. sample
    of its own law; sharing the streams removes the common Monte Carlo
    fluctuation from the difference of means.
    """
    A = run_ensemble(model, S0_a, n_chains, K, observables, workers)
    B = run_ensemble(model, S0_b, n_chains, K, observables, workers)
    d = np.array([estimate_dual_lipschitz(A.at(k), B.at(k)) for k in range(K + 1)])
    fit = fit_decay_rate(d, window)
    report = MixingReport(d, fit, (n_chains, n_chains), window, max_cfl=max(A.max_cfl, B.max_cfl))
    if coupling:
        sa = S0_a if S0_a.ndim == 2 else S0_a[:, 0]
        sb = S0_b if S0_b.ndim == 2 else S0_b[:, 0]
        series = coupling_experiment(model, sa, sb, K)
        report.coupling = series
        report.coupling_fit = fit_decay_rate(series, window)
    return report
