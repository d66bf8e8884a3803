"""Acceptance criteria at full size and the stated tolerances.

Each test records one PASS/FAIL line (see the ``acceptance criteria``
section of the terminal summary).  The whole module takes roughly half an
hour on one core; run it alone with ``pytest -m acceptance``.
"""
import json
import time

import numpy as np
import pytest
from scipy import stats

from benard_mix.config import RunConfig
from benard_mix.control import build_chi, random_deviation
from benard_mix.experiments import run_experiment
from benard_mix.grid import Grid, ModeSpace, ScalarField, VectorField, inner, sobolev_norm
from benard_mix.noise import NoiseConfig, build_basis, sample_noise, sample_xi, xi_cdf
from benard_mix.stokes import StokesOperator
from benard_mix.thermal import StepperConfig, ThermalStepper, step

pytestmark = pytest.mark.acceptance


def timed_run(kind, cfg, out, workers=None):
    start = time.perf_counter()
    rep = run_experiment(kind, cfg, out, workers)
    return rep, time.perf_counter() - start


@pytest.fixture(scope="module")
def out(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def adjoint_run(out):
    return timed_run("adjoint-check", RunConfig(), out / "adjoint")


@pytest.fixture(scope="module")
def control_run(out):
    return timed_run("control", RunConfig(), out / "control")


def test_01_stokes_oracle(out, criterion):
    rep, wall = timed_run("stokes-validate", RunConfig(), out / "stokes")
    err = rep.metrics["max_relative_error"]
    ok = err <= 1e-9 and wall < 10.0 and rep.metrics["fields"] == 50 and rep.metrics["grid"] == [16, 16, 17]
    criterion(1, "Stokes solver vs dense oracle", ok, f"max relative error {err:.2e} on 16x16x17, {wall:.1f} s")
    assert ok


def test_02_profile_drives_no_flow(criterion):
    g = Grid(32, 32, 32)
    op = StokesOperator(g, 1600.0)
    rng = np.random.default_rng(1)
    chi = build_chi(1.0, 0.0, 0.05, 0.45, g).chi
    profiles = [chi] + [rng.standard_normal(g.n3 + 1) for _ in range(10)]
    worst = 0.0
    for p in profiles:
        T = ScalarField(g, np.broadcast_to(p[:, None, None], g.shape).copy(), p[0], p[-1])
        worst = max(worst, op.apply_M(T).max_abs() / sobolev_norm(T.values, 0, g))
    ok = worst <= 1e-10
    criterion(2, "M(chi) = 0 and M(profile) = 0", ok, f"max |M(p)| / ||p|| = {worst:.1e} over chi and 10 random profiles")
    assert ok


def test_03_stokes_adjointness(criterion):
    g = Grid(32, 32, 32)
    op = StokesOperator(g, 1600.0)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        T = rng.standard_normal(g.shape)
        T[0] = T[-1] = 0.0
        f = [rng.standard_normal(g.shape) for _ in range(3)]
        for c in f:
            c[0] = c[-1] = 0.0
        u = op.apply_M(T)
        lhs = sum(inner(a, b, g) for a, b in zip(u.components, f))
        rhs = inner(T, op.apply_M_star(VectorField(g, *f)).values, g)
        scale = sobolev_norm(T, 0, g) * np.sqrt(sum(inner(c, c, g) for c in f))
        worst = max(worst, abs(lhs - rhs) / scale)
    ok = worst <= 1e-10
    criterion(3, "<M T, f> = <T, M* f>", ok, f"worst relative gap {worst:.1e} over 100 pairs")
    assert ok


def test_04_conduction_fixed_point(criterion):
    g = Grid(32, 32, 32)
    T = g.conduction(1.0, 0.0)
    Tbar = T.values.copy()
    prev = None
    for _ in range(100):
        T, prev = step(T, None, 1.0 / 256, Ra=1600.0, previous=prev)
    drift = float(np.max(np.abs(T.values - Tbar)))
    ok = drift <= 1e-10
    criterion(4, "conduction is a fixed point", ok, f"max drift {drift:.1e} after 100 steps")
    assert ok


def test_05_diffusion(criterion):
    g = Grid(8, 8, 32)
    dt = 1.0 / 256
    st = ThermalStepper(g, StepperConfig(dt=dt, Ra=0.0))
    S = st.space.restrict(g.field(lambda x1, x2, x3: np.sin(np.pi * x3) * np.cos(x1)).values)
    S1 = st.cn_solve(S, np.zeros_like(S))
    mu = -(4.0 / g.h**2) * np.sin(0.5 * np.pi * g.h) ** 2 - 1.0
    factor = (1 + 0.5 * dt * mu) / (1 - 0.5 * dt * mu)
    cn_err = float(np.max(np.abs(S1 - factor * S)) / np.max(np.abs(S)))

    g64 = Grid(8, 8, 64)
    st64 = ThermalStepper(g64, StepperConfig(dt=dt, Ra=0.0))
    S0 = st64.space.restrict(g64.field(lambda x1, x2, x3: np.sin(np.pi * x3) + 0 * x1).values)
    S1, _ = st64.run(S0)
    rate = -np.log(np.max(np.abs(S1)) / np.max(np.abs(S0)))
    rel = abs(rate - np.pi**2) / np.pi**2
    ok = cn_err <= 1e-10 and rel <= 0.01
    criterion(5, "Ra = 0 diffusion", ok, f"CN factor error {cn_err:.1e}; decay rate {rate:.4f} vs pi^2 ({100 * rel:.3f}%)")
    assert ok


def test_06_richardson(criterion):
    g = Grid(32, 32, 32)
    cfg = RunConfig()
    config = cfg.noise
    basis = build_basis(config, g)
    sp = ModeSpace(g)
    S0 = random_deviation(sp, 0.05, np.random.default_rng(3))
    forcing = sample_noise(1, config, basis).forcing(sp)
    finals = []
    for n in (256, 512, 1024):
        st = ThermalStepper(g, StepperConfig(dt=1.0 / n), sp)
        finals.append(st.run(S0, forcing)[0])
    ratio = float(sp.norm(finals[0] - finals[1]) / sp.norm(finals[1] - finals[2]))
    ok = 3.5 <= ratio <= 4.5
    criterion(6, "Richardson ratio (dt, dt/2, dt/4)", ok, f"ratio {ratio:.3f} at dt = 1/256, a = {config.a}")
    assert ok


def test_07_duality(out, adjoint_run, criterion):
    rep, _ = adjoint_run
    m = rep.metrics
    timing = json.loads((out / "adjoint" / "timing.json").read_text())
    idx = m["dts"].index(m["residual_dt"])
    ok = (
        m["residual_dt"] == 1.0 / 256
        and m["max_residual"][idx] <= 1e-6
        and all(1.5 <= o <= 2.5 for o in m["observed_orders"])
        and timing["duality"] < 120.0
    )
    criterion(7, "tangent/dual duality", ok,
              f"max residual {m['max_residual'][idx]:.2e} at dt = 1/256 over 20 pairs, "
              f"orders {[round(o, 2) for o in m['observed_orders']]}, {timing['duality']:.0f} s")
    assert ok


def test_08_finite_difference(adjoint_run, criterion):
    rep, _ = adjoint_run
    slope = rep.metrics["fd_slope"]
    ok = abs(slope - 1.0) <= 0.1
    criterion(8, "tangent vs finite differences", ok, f"slope {slope:.4f} over eps in [1e-5, 1e-2]")
    assert ok


def test_09_noise(criterion):
    x = sample_xi(np.random.default_rng(2), 1_000_000)
    se_mean = np.sqrt(1.0 / 7.0 / x.size)
    se_var = np.sqrt((1.0 / 21.0 - 1.0 / 49.0) / x.size)
    mean_ok = abs(x.mean()) <= 3 * se_mean
    var = float(np.var(x))
    var_ok = abs(var - 1.0 / 7.0) <= 3 * se_var
    ks = stats.kstest(sample_xi(np.random.default_rng(6), 100_000), xi_cdf).statistic
    g = Grid(32, 32, 32)
    basis = build_basis(NoiseConfig(m=64, c=0.5), g)
    above = max(float(np.max(np.abs(basis.element(j, t).values[g.layer_index:])))
                for j in range(basis.m) for t in (0.0, 0.5, 1.0))
    ok = mean_ok and var_ok and ks <= 0.01 and above == 0.0
    criterion(9, "noise law and support", ok,
              f"mean {x.mean():+.1e} (3 SE {3 * se_mean:.1e}), variance {var:.5f}, KS {ks:.4f}, max above c {above}")
    assert ok


def test_10_dissipativity(out, criterion):
    rep, wall = timed_run("dissipativity", RunConfig(), out / "dissipativity")
    m = rep.metrics
    ok = rep.passed
    criterion(10, "dissipativity entry times", ok,
              f"entry steps {m.get('entry_times')} for R = {m.get('radii')}, dt halvings {m.get('max_refinement')}"
              + (f", error {rep.error}" if rep.error else ""))
    assert ok


def test_11_control_as_stated(out, criterion):
    cfg = RunConfig().with_overrides({"physics.Ra": 1.0e4})
    rep, wall = timed_run("control", cfg, out / "control_ra1e4")
    ok = rep.passed and wall < 600
    detail = rep.error or f"{rep.metrics['trials_at_most_half']}/10 trials, best ratio {rep.metrics['best_ratio']:.2e}"
    criterion(11, "control at Ra = 1e4, n = 8, auto l", ok, f"{detail} ({wall:.0f} s)")
    assert ok


def test_11_control_default_ra(control_run, criterion):
    rep, wall = control_run
    m = rep.metrics
    ok = rep.passed and wall < 600
    criterion(11, "control at default Ra = 1600, n = 8, auto l", ok,
              f"l = {m['l']}, {m['trials_at_most_half']}/10 trials <= 1/2, best ratio {m['best_ratio']:.2e}, "
              f"a_min {m['minimal_admissible_a']:.3g} ({wall:.0f} s)")
    assert ok


def test_12_mixing(out, control_run, criterion):
    a_min = control_run[0].metrics["minimal_admissible_a"]
    cfg = RunConfig().with_overrides({"noise.a": float(a_min)})
    rep, wall = timed_run("mix", cfg, out / "mix")
    m = rep.metrics
    ok = rep.passed and wall < 1800
    criterion(12, "mixing rate", ok,
              f"gamma {m.get('gamma', float('nan')):.3f} (R^2 {m.get('r2', float('nan')):.4f}), "
              f"coupling rate {m.get('coupling_gamma', float('nan')):.3f}, a = {a_min:.3g}, {wall:.0f} s"
              + (f", error {rep.error}" if rep.error else ""))
    assert ok


def test_13_density(adjoint_run, criterion):
    rep, _ = adjoint_run
    s = rep.metrics["sigma_d"]
    ok = s > 1e-10
    criterion(13, "density diagnostic", ok, f"sigma_20 = {s:.2e} with m = 64")
    assert ok


def test_14_worker_determinism(out, criterion, monkeypatch):
    monkeypatch.delenv("BENARD_MIX_THREADS", raising=False)
    cases = {
        "mix": (RunConfig().with_overrides({"mix.chains": 8, "mix.steps": 6, "mix.window": [1, 6]}),
                ("report.json", "mixing.csv", "summary.json")),
        "control": (RunConfig().with_overrides({"control.trials": 3}), ("report.json", "control.csv")),
    }
    same = {}
    for kind, (cfg, files) in cases.items():
        run_experiment(kind, cfg, out / f"{kind}_w1", workers=1)
        run_experiment(kind, cfg, out / f"{kind}_w8", workers=8)
        same[kind] = all((out / f"{kind}_w1" / f).read_bytes() == (out / f"{kind}_w8" / f).read_bytes() for f in files)
    ok = all(same.values())
    criterion(14, "reports identical at 1 and 8 workers", ok, ", ".join(f"{k}: {'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
    assert ok
