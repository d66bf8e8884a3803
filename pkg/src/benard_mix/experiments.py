"""Experiment drivers: one function per kind, each writing a report directory.

Every run writes ``report.json`` (kind, config hash, seed, metrics, gates),
CSV series and PNG figures into its output directory.  ``report.json`` and
the CSVs depend only on the configuration; wall-clock time goes to a
separate ``timing.json`` so reports can be compared byte for byte.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.stats

from . import plotting
from .adjoint import LinearisedFlow, density_diagnostic, duality_check, ordered_map
from .checkpoint import chain_modes, load_checkpoint, save_checkpoint, write_plane_means
from .config import ConfigError, RunConfig
from .control import ControlledSystem, build_chi, random_deviation, select_l
from .grid import Grid, sobolev_norm
from .markov import ChainModel, ObservableDictionary, calibrate_ball, dissipativity_experiment, mixing_experiment
from .noise import build_basis, coefficient_forcing, gram_residual, sample_xi, xi_cdf, xi_stream
from .stokes import StokesOperator, dense_primitive_solve
from .thermal import CFLViolation, FrozenTrajectory, ThermalStepper

__all__ = [
    "KINDS",
    "EXIT_PASS",
    "EXIT_GATE",
    "EXIT_CONFIG",
    "Report",
    "run_experiment",
    "resolve_workers",
]

EXIT_PASS, EXIT_GATE, EXIT_CONFIG = 0, 1, 2
CSV_SCHEMA = 1
KINDS = ("simulate", "mix", "control", "adjoint-check", "stokes-validate", "noise-validate", "dissipativity")

# variance of xi^2 for the density (15/16)(1 - x^2)^2: E xi^4 - (E xi^2)^2
XI_VAR = 1.0 / 7.0
XI_VAR_OF_SQUARE = 1.0 / 21.0 - 1.0 / 49.0


@dataclass
class Report:
    kind: str
    config_hash: str
    seed: int
    metrics: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    error: str | None = None
    wall_time: float = 0.0
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.error is None and all(self.gates.values())

    @property
    def exit_code(self) -> int:
        return EXIT_PASS if self.passed else EXIT_GATE

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "csv_schema": CSV_SCHEMA,
            "passed": self.passed,
            "gates": self.gates,
            "metrics": _clean(self.metrics),
            "files": sorted(self.files),
            "error": self.error,
        }

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "report.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        (out_dir / "timing.json").write_text(json.dumps({"wall_time": self.wall_time, **self.timings}, sort_keys=True) + "\n")
        return path


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def resolve_workers(requested: int | None) -> int:
    """Worker count, capped by ``BENARD_MIX_THREADS`` when it is set."""
    n = 1 if requested is None else max(1, int(requested))
    cap = os.environ.get("BENARD_MIX_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _write_csv(path: Path, header: list[str], rows) -> str:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path.name


# -- shared setup -------------------------------------------------------------


def _model(cfg: RunConfig, grid: Grid | None = None) -> ChainModel:
    grid = grid or cfg.grid
    return ChainModel(grid, cfg.stepper, cfg.noise)


def _initial_state(spec: str, model: ChainModel, rng: np.random.Generator, ball) -> np.ndarray:
    """Deviation modes for ``conduction``, ``random``, ``random:R`` or ``checkpoint:path``."""
    sp = model.space
    if spec == "conduction":
        return sp.zeros()
    if spec == "random":
        return random_deviation(sp, ball(), rng)
    if spec.startswith("random:"):
        return random_deviation(sp, float(spec.split(":", 1)[1]), rng)
    if spec.startswith("checkpoint:"):
        ckpt = load_checkpoint(spec.split(":", 1)[1], grid=model.grid)
        return chain_modes(ckpt, sp)
    raise ConfigError([f"unknown initial state {spec!r}"])


class _Ball:
    """Lazily calibrated absorbing-ball radius."""

    def __init__(self, model: ChainModel, burn_in: int):
        self.model, self.burn_in, self.value = model, burn_in, None

    def __call__(self) -> float:
        if self.value is None:
            self.value = calibrate_ball(self.model, self.burn_in)
        return self.value


# -- simulate -----------------------------------------------------------------


def _simulate(cfg: RunConfig, out: Path, report: Report, workers: int) -> None:
    s = cfg["simulate"]
    model = _model(cfg)
    sp, st = model.space, model.stepper
    ball = _Ball(model, cfg["mix"]["burn_in"])
    S = _initial_state(s["init"], model, np.random.default_rng(cfg["mix"]["init_seed"]), ball)
    seed = cfg.noise.seed
    rows = []
    k = 0

    def row(k, S):
        T = st.to_field(S)
        return [k, float(sp.norm(S)), float(sp.h1_norm(S)), float(sobolev_norm(T, 1)), st.max_cfl]

    try:
        for k in range(1, s["steps"] + 1):
            S = model.advance(S[:, None, :], [0], k)[:, 0, :]
            rows.append(row(k, S))
            if s["checkpoint_every"] and k % s["checkpoint_every"] == 0:
                name = f"checkpoint_{k:05d}.bmix"
                save_checkpoint(out / name, st.to_field(S), S, k=k, seed=seed, chain=0, meta={"config_hash": cfg.hash})
                report.files.append(name)
    finally:
        report.files.append(_write_csv(out / "energy.csv", ["k", "S_L2", "S_H1", "T_H1", "max_cfl"], rows))
    final = st.to_field(S)
    save_checkpoint(out / "final.bmix", final, S, k=k, seed=seed, chain=0, meta={"config_hash": cfg.hash})
    report.files += ["final.bmix", write_plane_means(out / "plane_means.csv", final).name]
    if rows:
        r = np.array(rows)
        plotting.plot_series(out / "energy.png", r[:, 0], {"S L2": r[:, 1], "S H1": r[:, 2]}, "step k", "norm", log=True)
        report.files.append("energy.png")
    report.metrics.update(steps=s["steps"], final_S_H1=float(sp.h1_norm(S)), max_cfl=st.max_cfl)
    report.gates["finite"] = bool(np.all(np.isfinite(S)))


# -- mix ----------------------------------------------------------------------


def _mix(cfg: RunConfig, out: Path, report: Report, workers: int) -> None:
    m = cfg["mix"]
    model = _model(cfg)
    sp = model.space
    ball = _Ball(model, m["burn_in"])
    rng = np.random.default_rng(m["init_seed"])
    S_a = _initial_state(m["init_a"], model, rng, ball)
    S_b = _initial_state(m["init_b"], model, rng, ball)
    obs = ObservableDictionary(sp, m["observables"], m["observable_seed"])
    window = tuple(m["window"])
    res = mixing_experiment(model, S_a, S_b, m["chains"], m["steps"], obs, window, workers, m["coupling"])
    coupling = res.coupling if res.coupling is not None else np.full(len(res.distances), np.nan)
    rows = [[k, d, c] for k, (d, c) in enumerate(zip(res.distances, coupling))]
    report.files.append(_write_csv(out / "mixing.csv", ["k", "d_k", "coupling_H1"], rows))
    plotting.plot_decay(out / "mixing.png", res.distances, res.fit.gamma, res.fit.C, window, "d_k")
    report.files.append("mixing.png")
    if res.coupling is not None:
        cf = res.coupling_fit
        plotting.plot_decay(out / "coupling.png", res.coupling, cf.gamma, cf.C, window, "coupling H1 distance")
        report.files.append("coupling.png")
    summary = {
        "gamma": res.fit.gamma,
        "C": res.fit.C,
        "r2": res.fit.r2,
        "window": list(window),
        "excluded_steps": list(res.fit.excluded),
        "chains": m["chains"],
        "steps": m["steps"],
        "a": cfg.noise.a,
        "ball_radius": ball.value,
        "initial_H1": [float(sp.h1_norm(S_a)), float(sp.h1_norm(S_b))],
        "max_cfl": res.max_cfl,
        "config_hash": cfg.hash,
        "distance_note": "lower bound: maximum over a finite observable dictionary",
    }
    if res.coupling is not None:
        summary.update(coupling_gamma=res.coupling_fit.gamma, coupling_r2=res.coupling_fit.r2)
    (out / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    report.files.append("summary.json")
    report.metrics.update(summary)
    sweep = []
    for a in m["a_sweep"]:
        # observed mixing per amplitude; reported only, the gates use noise.a
        model_a = ChainModel(model.grid, model.stepper_config, replace(model.noise_config, a=float(a)), model.basis)
        r = mixing_experiment(model_a, S_a, S_b, m["chains"], m["steps"], obs, window, workers, False)
        sweep.append([float(a), r.fit.gamma, r.fit.r2])
    if sweep:
        report.files.append(_write_csv(out / "a_sweep.csv", ["a", "gamma", "r2"], sweep))
        report.metrics["a_sweep"] = [{"a": a, "gamma": g, "r2": r2} for a, g, r2 in sweep]
    report.gates["gamma_positive"] = bool(np.isfinite(res.fit.gamma) and res.fit.gamma > 0)
    report.gates["r2_at_least_0.9"] = bool(res.fit.r2 >= 0.9)
    if res.coupling is not None:
        report.gates["coupling_rate_positive"] = bool(res.coupling_fit.gamma > 0)


# -- control ------------------------------------------------------------------


def _control(cfg: RunConfig, out: Path, report: Report, workers: int) -> None:
    c = cfg["control"]
    grid, scfg, ncfg = cfg.grid, cfg.stepper, cfg.noise
    model = _model(cfg)
    basis = model.basis
    target = build_chi(scfg.T_b, scfg.T_u, c["eps1"], c["eps2"], grid)
    if c["l"] == "auto":
        system, periodic, tried = select_l(grid, scfg, basis, target, c["l_max"], stepper=model.stepper)
    else:
        system = ControlledSystem(grid, scfg, basis, target, c["l"], stepper=model.stepper)
        periodic = system.find_periodic_solution()
        tried = [{"l": c["l"], "converged": periodic.converged, "max_ratio": max(periodic.ratios, default=0.0),
                  "iterations": periodic.iterations, "residual": periodic.residual}]
    l = system.l
    radius = c["radius"] if c["radius"] > 0 else _Ball(model, cfg["mix"]["burn_in"])()
    sp = system.space
    inits = [random_deviation(sp, radius, np.random.default_rng([c["seed"], t])) for t in range(c["trials"])]
    b = ncfg.b
    systems = {}

    def trial(t):
        # one controlled system (and stepper) per trial keeps threads independent
        sys_t = systems.get(t % workers)
        if sys_t is None:
            st = ThermalStepper(grid, scfg, sp)
            sys_t = systems[t % workers] = ControlledSystem(grid, scfg, basis, target, l, stepper=st)
        ratio, det = sys_t.verify_property_C(inits[t], c["n"], periodic)
        return {
            "trial": t,
            "ratio": ratio,
            "initial_distance": det["initial_distance"],
            "final_distance": det["final_distance"],
            "consistency": det["consistency"],
            "a_min": det["controls"].admissible_amplitude(b),
            "distances": det["distances"],
        }

    if workers > 1:
        for w in range(workers):
            systems[w] = ControlledSystem(grid, scfg, basis, target, l, stepper=ThermalStepper(grid, scfg, sp))
    results = ordered_map(trial, range(c["trials"]), workers)
    ratios = np.array([r["ratio"] for r in results])
    a_periodic = float(np.max(np.abs(periodic.coefficients) / b[:l])) if l else 0.0
    a_min = max([a_periodic] + [r["a_min"] for r in results])
    need = math.ceil(0.9 * c["trials"])
    rows = [[r["trial"], r["ratio"], r["initial_distance"], r["final_distance"], r["consistency"], r["a_min"]] for r in results]
    report.files.append(_write_csv(out / "control.csv", ["trial", "ratio", "initial_H1", "final_H1", "consistency_H1", "a_min"], rows))
    steps = np.arange(c["n"] + 1)
    plotting.plot_series(out / "control.png", steps, {f"trial {r['trial']}": r["distances"] for r in results},
                         "step k", "H1 distance to target", log=True)
    report.files.append("control.png")
    report.metrics.update(
        l=l,
        l_search=tried,
        n=c["n"],
        ball_radius=radius,
        ratios=ratios,
        best_ratio=float(ratios.min()),
        worst_ratio=float(ratios.max()),
        trials_at_most_half=int(np.sum(ratios <= 0.5)),
        trials_at_most_twelfth=int(np.sum(ratios <= 1.0 / 12.0)),
        minimal_admissible_a=a_min,
        periodic_residual=periodic.residual,
        periodic_iterations=periodic.iterations,
        periodic_coefficients=periodic.coefficients,
        max_consistency=max(r["consistency"] for r in results),
        max_cfl=max([model.stepper.max_cfl] + [s.stepper.max_cfl for s in systems.values()]),
    )
    report.gates["contraction_at_most_half"] = bool(np.sum(ratios <= 0.5) >= need)
    report.gates["driven_system_consistent"] = bool(report.metrics["max_consistency"] <= 1e-6)


# -- adjoint-check -------------------------------------------------------------


def _base_trajectory(cfg: RunConfig, dt: float, S0: np.ndarray, basis, model_noise_coef) -> FrozenTrajectory:
    st = ThermalStepper(cfg.grid, replace(cfg.stepper, dt=dt))
    forcing = coefficient_forcing(basis, model_noise_coef, st.space) if model_noise_coef is not None else None
    _, hist = st.run(S0, forcing, record=True)
    return FrozenTrajectory(st, hist)


def _adjoint(cfg: RunConfig, out: Path, report: Report, workers: int) -> None:
    a = cfg["adjoint"]
    model = _model(cfg)
    sp, basis, ncfg = model.space, model.basis, cfg.noise
    rng = np.random.default_rng(a["seed"])
    S0 = random_deviation(sp, a["radius"] if a["radius"] > 0 else 0.05, rng)
    eta = ncfg.a * ncfg.b * model.xi([0], 1)[0] if ncfg.a > 0 else None
    pairs = a["pairs"]
    zeta_coef = ncfg.b * sample_xi(rng, (pairs, basis.m))
    psi1 = np.stack([random_deviation(sp, 1.0, rng) for _ in range(pairs)], axis=1)
    dts = sorted((float(v) for v in a["dts"]), reverse=True)
    blocks = [np.arange(s, min(s + 4, pairs)) for s in range(0, pairs, 4)]
    residuals, alt_residuals = [], []
    t_start = time.perf_counter()
    for dt in dts:
        traj = _base_trajectory(cfg, dt, S0, basis, eta)
        flow = LinearisedFlow(traj)

        def check(rows):
            z = coefficient_forcing(basis, zeta_coef[rows], sp)
            r = duality_check(traj, z, psi1[:, rows], flow=flow)
            return r.residual, r.absolute / r.lhs_scale

        parts = ordered_map(check, blocks, workers, flow.prepare)
        residuals.append(np.concatenate([np.atleast_1d(r) for r, _ in parts]))
        alt_residuals.append(np.concatenate([np.atleast_1d(r) for _, r in parts]))
    duality_time = time.perf_counter() - t_start
    residuals = np.array(residuals)
    rms = np.sqrt(np.mean(residuals**2, axis=1))
    orders = [float(np.log2(rms[i] / rms[i + 1]) / np.log2(dts[i] / dts[i + 1])) for i in range(len(dts) - 1)]
    rows = [[dt] + list(r) for dt, r in zip(dts, residuals)]
    report.files.append(_write_csv(out / "duality.csv", ["dt"] + [f"pair_{i}" for i in range(pairs)], rows))
    plotting.plot_duality(out / "duality.png", dts, residuals)
    report.files.append("duality.png")

    # finite-difference check of the tangent at the configured dt
    traj = _base_trajectory(cfg, cfg.stepper.dt, S0, basis, eta)
    flow = LinearisedFlow(traj)
    st = traj.stepper
    z = coefficient_forcing(basis, zeta_coef[:1], sp)
    theta1 = flow.tangent(z)[:, 0]
    # unit-norm response keeps eps * theta well above round-off at eps = 1e-5
    scale = 1.0 / float(sp.norm(theta1))
    theta1 = scale * theta1
    S1 = traj.modes[-1]
    eps_list = [1e-2, 1e-3, 1e-4, 1e-5]
    fd = []
    for eps in eps_list:
        pert = coefficient_forcing(basis, (eta if eta is not None else 0.0) + eps * scale * zeta_coef[:1], sp)
        Sp, _ = st.run(S0[:, None, :], pert)
        fd.append(float(sp.norm(Sp[:, 0] - S1 - eps * theta1) / sp.norm(eps * theta1)))
    slope = float(np.polyfit(np.log(eps_list), np.log(fd), 1)[0])
    report.files.append(_write_csv(out / "tangent_fd.csv", ["eps", "relative_error"], zip(eps_list, fd)))

    gram = density_diagnostic(traj, basis, a["controls"], a["target_dim"], flow=flow, workers=workers)
    report.files.append(_write_csv(out / "singular_values.csv", ["index", "sigma"],
                                   [[i + 1, s] for i, s in enumerate(gram.singular_values)]))
    plotting.plot_singular_values(out / "singular_values.png", gram.singular_values)
    report.files.append("singular_values.png")

    default_dt = min(dts, key=lambda v: abs(v - 1.0 / 256))
    idx = dts.index(default_dt)
    report.metrics.update(
        dts=dts,
        max_residual=residuals.max(axis=1),
        max_residual_theta_scale=np.array(alt_residuals).max(axis=1),
        rms_residual=rms,
        observed_orders=orders,
        residual_dt=default_dt,
        fd_eps=eps_list,
        fd_errors=fd,
        fd_slope=slope,
        singular_values=gram.singular_values,
        sigma_d=gram.sigma_min,
        controls=a["controls"],
        target_dim=a["target_dim"],
    )
    report.gates["duality_residual_at_most_1e-6"] = bool(residuals[idx].max() <= 1e-6)
    if orders:
        report.gates["duality_second_order"] = bool(all(1.5 <= o <= 2.5 for o in orders))
    report.gates["tangent_fd_slope"] = bool(abs(slope - 1.0) <= 0.1)
    report.gates["sigma_d_above_1e-10"] = bool(gram.sigma_min > 1e-10)
    report.timings["duality"] = duality_time


# -- stokes-validate -----------------------------------------------------------


def _stokes(cfg: RunConfig, out: Path, report: Report, workers: int) -> None:
    s = cfg["stokes"]
    n = s["n"]
    grid = Grid(n, n, n, 0.5)
    Ra = cfg.stepper.Ra
    op = StokesOperator(grid, Ra)
    sp = op.space
    rng = np.random.default_rng(s["seed"])
    T = rng.standard_normal((s["fields"],) + grid.shape)
    T[:, 0] = T[:, -1] = 0.0
    X = sp.restrict(T)  # (N, fields, K)
    u = op.fast.velocity(X)
    rows = []
    err2 = np.zeros(s["fields"])
    ref2 = np.zeros(s["fields"])
    for i in range(sp.K):
        k1, k2 = sp.k1[i], sp.k2[i]
        if k1 == 0 and k2 == 0:
            continue
        dense = dense_primitive_solve((k1, k2), X[:, :, i], grid.n3, Ra)
        diff = sum(np.sum(np.abs(d - c[:, :, i]) ** 2, axis=0) for d, c in zip(dense, u))
        ref = sum(np.sum(np.abs(d) ** 2, axis=0) for d in dense)
        err2 += sp.weights[i] * diff
        ref2 += sp.weights[i] * ref
        solver = op.solver_for(int(sp.i1[i]), int(sp.i2[i]))
        w = u[2][:, :, i] / Ra
        rhs = sp.ksq[i] * X[:, :, i]
        res = max(solver.residual(w[:, f], rhs[:, f]) for f in range(s["fields"]))
        rows.append([int(k1), int(k2), float(res), float(np.sqrt(diff.sum() / max(ref.sum(), 1e-300)))])
    rel = np.sqrt(err2 / ref2)
    report.files.append(_write_csv(out / "stokes_modes.csv", ["k1", "k2", "residual", "oracle_deviation"], rows))
    report.metrics.update(grid=[n, n, n + 1], fields=s["fields"], max_relative_error=float(rel.max()),
                          max_mode_residual=max(r[2] for r in rows))
    report.gates["oracle_relative_error_at_most_1e-9"] = bool(rel.max() <= 1e-9)


# -- noise-validate ------------------------------------------------------------


def _noise(cfg: RunConfig, out: Path, report: Report, workers: int) -> None:
    v = cfg["noise_validate"]
    grid = cfg.grid
    basis = build_basis(cfg.noise, grid)
    resid = gram_residual(basis)
    x = sample_xi(xi_stream(v["seed"], 0, 0), v["draws"])
    n = len(x)
    mean, var = float(np.mean(x)), float(np.var(x))
    se_mean = math.sqrt(XI_VAR / n)
    se_var = math.sqrt(XI_VAR_OF_SQUARE / n)
    y = sample_xi(xi_stream(v["seed"], 1, 0), v["ks_draws"])
    ks = scipy.stats.kstest(y, xi_cdf)
    layer = grid.layer_index
    support_max = 0.0
    for j in range(basis.m):
        for t in (0.0, 0.37, 1.0):
            support_max = max(support_max, float(np.max(np.abs(basis.element(j, t).values[layer:]))))
    rows = [
        ["gram_residual", resid], ["mean", mean], ["mean_se", se_mean], ["variance", var],
        ["variance_se", se_var], ["ks_statistic", float(ks.statistic)], ["ks_pvalue", float(ks.pvalue)],
        ["max_abs_above_c", support_max], ["c_basis", basis.c_basis],
    ]
    report.files.append(_write_csv(out / "noise_validation.csv", ["quantity", "value"], rows))
    report.metrics.update({r[0]: r[1] for r in rows})
    report.gates["gram_residual_at_most_1e-10"] = bool(resid <= 1e-10)
    report.gates["mean_within_3se"] = bool(abs(mean) <= 3 * se_mean)
    report.gates["variance_within_3se"] = bool(abs(var - XI_VAR) <= 3 * se_var)
    report.gates["ks_at_most_0.01"] = bool(ks.statistic <= 0.01)
    report.gates["zero_above_c"] = bool(support_max == 0.0)


# -- dissipativity -------------------------------------------------------------


def _dissipativity(cfg: RunConfig, out: Path, report: Report, workers: int) -> None:
    d = cfg["dissipativity"]
    model = _model(cfg)
    ball = calibrate_ball(model, cfg["mix"]["burn_in"])
    res = dissipativity_experiment(model, d["radii"], ball, d["budget"], d["seed"])
    rows = [[R, -1 if t is None else t] for R, t in zip(res.radii, res.entry_times)]
    report.files.append(_write_csv(out / "entry_times.csv", ["R", "entry_step"], rows))
    plotting.plot_entry_times(out / "dissipativity.png", res.norms, res.ball, res.radii)
    report.files.append("dissipativity.png")
    times = res.entry_times
    entered = all(t is not None for t in times)
    order = np.argsort(res.radii)
    R = np.array(res.radii)[order]
    t = np.array([np.inf if x is None else x for x in times], dtype=float)[order]
    nondecreasing = bool(entered and np.all(np.diff(t) >= 0))
    # sub-linear: entry time per unit radius strictly decreases with R
    per_r = t / np.maximum(R, 1e-300)
    sublinear = bool(entered and np.all(np.diff(per_r) < 0))
    report.metrics.update(ball_radius=res.ball, radii=res.radii, entry_times=times, log_slope=res.slope,
                          log_intercept=res.intercept, refinement=res.refinement,
                          max_refinement=max((max(r, default=0) for r in res.refinement), default=0),
                          final_norms=[series[-1] for series in res.norms])
    report.gates["all_entered"] = entered
    report.gates["entry_nondecreasing"] = nondecreasing
    report.gates["entry_sublinear"] = sublinear


_DRIVERS = {
    "simulate": _simulate,
    "mix": _mix,
    "control": _control,
    "adjoint-check": _adjoint,
    "stokes-validate": _stokes,
    "noise-validate": _noise,
    "dissipativity": _dissipativity,
}


def run_experiment(kind: str, config: RunConfig, out_dir=None, workers: int | None = None) -> Report:
    """Run one experiment and write its report into ``out_dir``.

    A CFL violation or non-finite state ends the run with a failed report
    (exit code 1) rather than an exception.
    """
    if kind not in _DRIVERS:
        raise ConfigError([f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}"])
    workers = resolve_workers(config["run"]["workers"] if workers is None else workers)
    out = Path(out_dir if out_dir is not None else f"runs/{kind}")
    out.mkdir(parents=True, exist_ok=True)
    report = Report(kind, config.hash, config.noise.seed)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    report.files.append("config.json")
    start = time.perf_counter()
    try:
        _DRIVERS[kind](config, out, report, workers)
    except (CFLViolation, FloatingPointError) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
    report.wall_time = time.perf_counter() - start
    report.write(out)
    return report
