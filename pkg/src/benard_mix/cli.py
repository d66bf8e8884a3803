"""Command line entry point: ``benard-mix <subcommand> --config path [flags]``.

Exit codes: 0 when every gate passes, 1 on a gate failure (including a
CFL abort), 2 on a configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings

from .config import ConfigError, RunConfig, load_config
from .experiments import EXIT_CONFIG, KINDS, run_experiment

__all__ = ["main", "build_parser"]


def _floats(text: str) -> list[float]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "/" in part:
            num, den = part.split("/", 1)
            out.append(float(num) / float(den))
        else:
            out.append(float(part))
    return out


def _l_value(text: str):
    return text if text == "auto" else int(text)


# subcommand -> [(flag, config key, type, help)]
_FLAGS = {
    "simulate": [
        ("--steps", "simulate.steps", int, "number of unit steps K"),
        ("--checkpoint-every", "simulate.checkpoint_every", int, "checkpoint interval in steps (0: final only)"),
        ("--init", "simulate.init", str, "conduction | random | random:R | checkpoint:path"),
    ],
    "mix": [
        ("--chains", "mix.chains", int, "chains per ensemble"),
        ("--steps", "mix.steps", int, "steps per chain"),
        ("--init", "mix.init_b", str, "second ensemble's start: conduction | random | random:R | checkpoint:path"),
        ("--a", "noise.a", float, "noise amplitude"),
        ("--a-sweep", "mix.a_sweep", _floats, "comma-separated extra amplitudes, reported per a"),
    ],
    "control": [
        ("--n", "control.n", int, "unit intervals per control"),
        ("--l", "control.l", _l_value, "projection dimension or 'auto'"),
        ("--eps1", "control.eps1", float, "lower edge of the profile transition"),
        ("--eps2", "control.eps2", float, "upper edge of the profile transition"),
        ("--trials", "control.trials", int, "random initial fields"),
    ],
    "adjoint-check": [
        ("--dt-sweep", "adjoint.dts", _floats, "comma-separated step sizes, e.g. 1/128,1/256"),
        ("--controls", "adjoint.controls", int, "number of basis controls m"),
        ("--target-dim", "adjoint.target_dim", int, "target dimension d"),
        ("--pairs", "adjoint.pairs", int, "random (zeta, psi1) pairs"),
    ],
    "stokes-validate": [
        ("--fields", "stokes.fields", int, "random temperature fields"),
    ],
    "noise-validate": [
        ("--draws", "noise_validate.draws", int, "draws for the moment tests"),
    ],
    "dissipativity": [
        ("--radii", "dissipativity.radii", _floats, "comma-separated initial H1 radii"),
    ],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="benard-mix", description="Randomly forced infinite-Prandtl convection experiments.")
    sub = parser.add_subparsers(dest="kind", required=True, metavar="subcommand")
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", help="key = value config file (defaults when omitted)")
        p.add_argument("--seed", type=int, help="noise seed (overrides noise.seed)")
        p.add_argument("--out-dir", help="output directory (default runs/<subcommand>)")
        p.add_argument("--workers", type=int, help="worker threads (capped by BENARD_MIX_THREADS)")
        for flag, key, typ, text in _FLAGS.get(kind, []):
            p.add_argument(flag, dest=key, type=typ, help=f"{text} ({key})")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_CONFIG
    overrides = {key: value for key, value in vars(args).items() if "." in key and value is not None}
    if args.seed is not None:
        overrides["noise.seed"] = args.seed
    if args.workers is not None:
        overrides["run.workers"] = args.workers
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            cfg = load_config(args.config) if args.config else RunConfig()
            if overrides:
                cfg = cfg.with_overrides(overrides)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        report = run_experiment(args.kind, cfg, args.out_dir)
    except ConfigError as exc:
        print(f"benard-mix: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    summary = {"kind": report.kind, "passed": report.passed, "gates": report.gates, "error": report.error}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return report.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
