"""Command line entry point: ``tied run | oracle | check | version``.

Exit codes: 0 ok, 2 config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from pathlib import Path

from . import __version__
from .energies import bimodal_circle_energy, constant_energy, oracle_density_circle, oracle_noisy_density_circle
from .errors import ConfigError, TiedError
from .noise import NoiseSchedule

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# module name -> test files run by `tied check --filter`
CHECK_TARGETS = {
    "lie": ["test_lie.py"],
    "noise": ["test_noise.py"],
    "sampler": ["test_sampler.py"],
    "inversion": ["test_inversion.py"],
    "energies": ["test_energies.py"],
    "cli": ["test_cli.py", "test_experiment.py"],
    "streams": ["test_streams.py"],
}


def _cmd_run(args) -> int:
    from .experiment import run_experiment

    report = run_experiment(args.config)
    print(json.dumps({"samples": str(report.samples_path), "seconds": round(report.seconds, 3),
                      "diagnostics": str(report.diagnostics_path)}))
    return EXIT_OK


def _cmd_oracle(args) -> int:
    if args.group not in ("so2", "SO2"):
        raise ConfigError("oracles are available for so2 only")
    if args.energy == "bimodal":
        energy = bimodal_circle_energy(args.beta)
    elif args.energy == "constant":
        energy = constant_energy()
    else:
        raise ConfigError(f"unknown oracle energy {args.energy!r}")
    try:
        if args.t > 0:
            dens = oracle_noisy_density_circle(energy, args.t, NoiseSchedule(args.gamma_min, args.gamma_max),
                                               args.bins)
        else:
            dens = oracle_density_circle(energy, args.bins)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dens.to_csv(args.out)
    print(f"wrote {args.bins} rows to {args.out}")
    return EXIT_OK


def _cmd_check(args) -> int:
    tests = Path(__file__).resolve().parents[2] / "tests"
    if not tests.is_dir():
        raise ConfigError(f"test suite not found at {tests}")
    if args.filter:
        if args.filter not in CHECK_TARGETS:
            raise ConfigError(f"unknown module {args.filter!r}; choose from {sorted(CHECK_TARGETS)}")
        targets = [str(tests / f) for f in CHECK_TARGETS[args.filter]]
    else:
        targets = [str(tests)]
    cmd = [sys.executable, "-m", "pytest", "-q", "-m", "not slow", *targets]
    return subprocess.call(cmd)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tied", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.set_defaults(fn=_cmd_run)

    o = sub.add_parser("oracle", help="write an exact circle density to CSV")
    o.add_argument("--group", default="so2")
    o.add_argument("--energy", default="bimodal", choices=["bimodal", "constant"])
    o.add_argument("--beta", type=float, default=4.0)
    o.add_argument("--bins", type=int, default=4096)
    o.add_argument("--t", type=float, default=0.0, help="noise time; 0 gives the clean density")
    o.add_argument("--gamma-min", type=float, default=0.1)
    o.add_argument("--gamma-max", type=float, default=3.0)
    o.add_argument("--out", required=True)
    o.set_defaults(fn=_cmd_oracle)

    c = sub.add_parser("check", help="run the fast property suite")
    c.add_argument("--filter", default=None, help="module name, e.g. lie or sampler")
    c.set_defaults(fn=_cmd_check)

    v = sub.add_parser("version", help="print the package version")
    v.set_defaults(fn=lambda args: print(__version__) or EXIT_OK)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TiedError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
