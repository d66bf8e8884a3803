"""Run configuration: a flat ``section.key = value`` text format.

Example::

    # 32 x 32 x 33 grid, boundary layer below x3 = 0.5
    grid.n1 = 32
    grid.n3 = 32
    physics.Ra = 1600
    noise.a = 10
    mix.chains = 64

Values are Python literals (numbers, strings, lists) or fractions such as
``1/256``; bare words are read as strings.  Unknown keys and invalid values are collected and reported
together.  The config hash covers every resolved field.
"""
from __future__ import annotations

import ast
import copy
import hashlib
import json
import warnings
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path

from .grid import Grid
from .noise import NoiseConfig
from .thermal import StepperConfig

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_config", "parse_config", "config_hash"]


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violation."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


DEFAULTS: dict[str, dict] = {
    "grid": {"n1": 32, "n2": 32, "n3": 32, "c": 0.5},
    "physics": {"Ra": 1600.0, "T_b": 1.0, "T_u": 0.0},
    "stepper": {"dt": 1.0 / 256, "cfl_limit": 0.5},
    "noise": {"a": 10.0, "m": 64, "s": 1.0, "b0": 1.0, "seed": 0, "quadrature": 256},
    "run": {"workers": 1},
    "simulate": {"steps": 10, "checkpoint_every": 0, "init": "conduction"},
    "mix": {
        "chains": 64,
        "steps": 25,
        "window": [5, 25],
        "init_a": "conduction",
        "init_b": "random",
        "observables": 32,
        "observable_seed": 20240601,
        "burn_in": 10,
        "init_seed": 3,
        "coupling": True,
        "a_sweep": [],
    },
    "control": {"n": 8, "l": "auto", "l_max": 8, "eps1": 0.05, "eps2": 0.45, "trials": 10, "radius": 0.0, "seed": 11},
    "adjoint": {"dts": [1.0 / 128, 1.0 / 256], "pairs": 20, "controls": 64, "target_dim": 20, "seed": 5, "radius": 0.0},
    "dissipativity": {"radii": [10.0, 100.0, 1000.0], "budget": 60, "seed": 7},
    "stokes": {"fields": 50, "n": 16, "seed": 1},
    "noise_validate": {"draws": 1_000_000, "ks_draws": 100_000, "seed": 2},
}

_INT_KEYS = {
    "grid.n1", "grid.n2", "grid.n3", "noise.m", "noise.seed", "noise.quadrature", "run.workers",
    "simulate.steps", "simulate.checkpoint_every", "mix.chains", "mix.steps", "mix.observables",
    "mix.observable_seed", "mix.burn_in", "mix.init_seed", "control.n", "control.l_max", "control.trials",
    "control.seed", "adjoint.pairs", "adjoint.controls", "adjoint.target_dim", "adjoint.seed",
    "dissipativity.budget", "dissipativity.seed", "stokes.fields", "stokes.n", "stokes.seed",
    "noise_validate.draws", "noise_validate.ks_draws", "noise_validate.seed",
}


@dataclass
class RunConfig:
    """Resolved configuration; ``sections`` maps section -> key -> value."""

    sections: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def get(self, dotted: str):
        section, key = dotted.split(".", 1)
        return self.sections[section][key]

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Copy with ``{"section.key": value}`` overrides, revalidated."""
        merged = copy.deepcopy(self.sections)
        for dotted, value in overrides.items():
            section, key = dotted.split(".", 1)
            merged.setdefault(section, {})[key] = value
        return _validate(merged)

    @property
    def grid(self) -> Grid:
        g = self["grid"]
        return Grid(g["n1"], g["n2"], g["n3"], g["c"])

    @property
    def stepper(self) -> StepperConfig:
        p, s = self["physics"], self["stepper"]
        return StepperConfig(dt=s["dt"], Ra=p["Ra"], T_b=p["T_b"], T_u=p["T_u"], cfl_limit=s["cfl_limit"])

    @property
    def noise(self) -> NoiseConfig:
        n = self["noise"]
        return NoiseConfig(
            a=n["a"], m=n["m"], s=n["s"], b0=n["b0"], c=self["grid"]["c"], seed=n["seed"], n_substeps=n["quadrature"]
        )

    def to_dict(self) -> dict:
        return copy.deepcopy(self.sections)

    @property
    def hash(self) -> str:
        """Hash of everything that affects results; ``run.*`` (execution
        settings such as the worker count) is left out."""
        return config_hash({k: v for k, v in self.sections.items() if k != "run"})


def config_hash(sections: dict) -> str:
    """SHA-256 of the canonical JSON form of the resolved sections."""
    text = json.dumps(sections, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        pass
    try:
        # step sizes are often written as fractions, e.g. 1/256
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        return text


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse and validate config text; raises :class:`ConfigError`."""
    errors = []
    raw: dict[str, dict] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"{source}:{lineno}: expected 'key = value', got {line!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            errors.append(f"{source}:{lineno}: key {key!r} must be 'section.name'")
            continue
        section, name = key.split(".", 1)
        if section not in DEFAULTS or name not in DEFAULTS[section]:
            # noise.c is accepted as another spelling of grid.c
            if key == "noise.c":
                section, name = "grid", "c"
            else:
                errors.append(f"{source}:{lineno}: unknown key {key!r}")
                continue
        if name in raw.get(section, {}):
            errors.append(f"{source}:{lineno}: duplicate key {section}.{name}")
            continue
        raw.setdefault(section, {})[name] = _parse_value(value)
    merged = copy.deepcopy(DEFAULTS)
    for section, values in raw.items():
        merged[section].update(values)
    return _validate(merged, errors)


def load_config(path) -> RunConfig:
    """Read and validate a config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return parse_config(text, str(path))


def _validate(sections: dict, errors: list[str] | None = None) -> RunConfig:
    errors = list(errors or [])
    notes = []

    def check(dotted, ok, message):
        if not ok:
            errors.append(f"{dotted}: {message}")

    for section, values in sections.items():
        for name, value in values.items():
            dotted = f"{section}.{name}"
            default = DEFAULTS.get(section, {}).get(name)
            ok = True
            if dotted in _INT_KEYS:
                if isinstance(value, float) and value.is_integer():
                    value = values[name] = int(value)
                ok = isinstance(value, int) and not isinstance(value, bool)
                check(dotted, ok, f"must be an integer, got {value!r}")
            elif isinstance(default, float):
                if isinstance(value, int) and not isinstance(value, bool):
                    value = values[name] = float(value)
                ok = isinstance(value, float)
                check(dotted, ok, f"must be a number, got {value!r}")
            if not ok:
                # keep checking the remaining keys against a well-typed stand-in
                values[name] = default

    g, p, s, n = sections["grid"], sections["physics"], sections["stepper"], sections["noise"]
    for key in ("n1", "n2"):
        check(f"grid.{key}", g[key] >= 8 and g[key] % 2 == 0, f"must be even and >= 8, got {g[key]}")
    check("grid.n3", g["n3"] >= 2, f"must be >= 2, got {g['n3']}")
    check("grid.c", 0.0 < g["c"] < 1.0, f"must lie in (0, 1), got {g['c']}")
    layer = g["c"] * g["n3"]
    check("grid.c", abs(layer - round(layer)) <= 1e-9, f"c * n3 must be an integer, got {layer:g}")
    check("physics.Ra", p["Ra"] >= 0, f"must be >= 0, got {p['Ra']}")
    if p["T_b"] < p["T_u"]:
        notes.append("physics.T_b < physics.T_u: stably stratified, no convective instability")
    check("stepper.dt", s["dt"] > 0, f"must be positive, got {s['dt']}")
    if s["dt"] > 0:
        inv = 1.0 / s["dt"]
        check("stepper.dt", abs(inv - round(inv)) <= 1e-9 * inv, f"must divide 1 exactly, got {s['dt']}")
    check("stepper.cfl_limit", s["cfl_limit"] > 0, "must be positive")
    check("noise.a", n["a"] >= 0, f"must be >= 0, got {n['a']}")
    check("noise.m", n["m"] >= 1, f"must be >= 1, got {n['m']}")
    check("noise.b0", n["b0"] > 0, "must be positive")
    check("noise.quadrature", n["quadrature"] >= 2, "must be >= 2")
    check("run.workers", sections["run"]["workers"] >= 1, "must be >= 1")
    check("simulate.steps", sections["simulate"]["steps"] >= 0, "must be >= 0")
    check("simulate.checkpoint_every", sections["simulate"]["checkpoint_every"] >= 0, "must be >= 0")
    _check_init("simulate.init", sections["simulate"]["init"], check)

    m = sections["mix"]
    check("mix.chains", m["chains"] >= 1, "must be >= 1")
    check("mix.steps", m["steps"] >= 1, "must be >= 1")
    w = m["window"]
    ok = isinstance(w, (list, tuple)) and len(w) == 2 and all(isinstance(v, int) for v in w)
    check("mix.window", ok and 0 <= w[0] < w[1] <= m["steps"], f"must be [start, end] with 0 <= start < end <= mix.steps, got {w!r}")
    _check_init("mix.init_a", m["init_a"], check)
    _check_init("mix.init_b", m["init_b"], check)
    check("mix.observables", m["observables"] >= 1, "must be >= 1")
    sw = m["a_sweep"]
    ok = isinstance(sw, (list, tuple)) and all(isinstance(v, (int, float)) and v >= 0 for v in sw)
    check("mix.a_sweep", ok, f"must be a list of non-negative amplitudes, got {sw!r}")

    c = sections["control"]
    check("control.n", c["n"] >= 1, "must be >= 1")
    l = c["l"]
    check("control.l", l == "auto" or (isinstance(l, int) and 1 <= l <= n["m"]), f"must be 'auto' or an integer in [1, noise.m], got {l!r}")
    check("control.eps1", 0 < c["eps1"] < c["eps2"] < g["c"], "need 0 < eps1 < eps2 < grid.c")
    check("control.trials", c["trials"] >= 1, "must be >= 1")
    check("control.radius", c["radius"] >= 0, "must be >= 0 (0 means the calibrated ball)")

    a = sections["adjoint"]
    dts = a["dts"]
    ok = isinstance(dts, (list, tuple)) and len(dts) >= 1 and all(isinstance(v, (int, float)) and v > 0 for v in dts)
    check("adjoint.dts", ok, f"must be a non-empty list of positive step sizes, got {dts!r}")
    if ok:
        for v in dts:
            inv = 1.0 / v
            check("adjoint.dts", abs(inv - round(inv)) <= 1e-9 * inv, f"{v} does not divide 1")
    check("adjoint.pairs", a["pairs"] >= 1, "must be >= 1")
    check("adjoint.target_dim", a["target_dim"] >= 1, "must be >= 1")
    check("adjoint.controls", a["target_dim"] <= a["controls"] <= n["m"], "need target_dim <= controls <= noise.m")

    d = sections["dissipativity"]
    radii = d["radii"]
    ok = isinstance(radii, (list, tuple)) and len(radii) >= 1 and all(isinstance(v, (int, float)) and v >= 0 for v in radii)
    check("dissipativity.radii", ok, f"must be a non-empty list of non-negative radii, got {radii!r}")
    check("dissipativity.budget", d["budget"] >= 1, "must be >= 1")
    check("stokes.fields", sections["stokes"]["fields"] >= 1, "must be >= 1")
    check("stokes.n", sections["stokes"]["n"] >= 8 and sections["stokes"]["n"] % 2 == 0, "must be even and >= 8")
    nv = sections["noise_validate"]
    check("noise_validate.draws", nv["draws"] >= 2, "must be >= 2")
    check("noise_validate.ks_draws", nv["ks_draws"] >= 2, "must be >= 2")
    if errors:
        raise ConfigError(errors)
    for note in notes:
        warnings.warn(note, stacklevel=3)
    return RunConfig(sections, notes)


def _check_init(dotted: str, value, check) -> None:
    ok = isinstance(value, str) and (
        value in ("conduction", "random") or value.startswith("random:") or value.startswith("checkpoint:")
    )
    if ok and value.startswith("random:"):
        try:
            ok = float(value.split(":", 1)[1]) >= 0
        except ValueError:
            ok = False
    check(dotted, ok, f"must be conduction, random, random:R or checkpoint:path, got {value!r}")
