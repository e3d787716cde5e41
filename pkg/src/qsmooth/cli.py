"""Command-line entry point: ``qsmooth {run,analyze,oracle,presets}``.

Exit codes: 0 success, 2 invalid input, 3 divergence, 4 oracle failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .config import PRESETS, ScenarioConfig
from .errors import ConfigError, DivergenceError, InvalidInputError, QSmoothError, RejectedModelError

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_ORACLE = 4


def parse_sweep(spec: str):
    """``"g=a:b:step"`` -> grid of g values including both ends."""
    try:
        name, rng = spec.split("=", 1)
        a, b, step = (float(v) for v in rng.split(":"))
    except ValueError:
        raise ConfigError("--sweep", f"expected g=a:b:step, got {spec!r}") from None
    if name.strip() != "g":
        raise ConfigError("--sweep", "only the preset parameter g can be swept")
    if step <= 0 or b < a:
        raise ConfigError("--sweep", "need step > 0 and b >= a")
    n = int(np.floor((b - a) / step + 1e-9)) + 1
    return np.round(a + step * np.arange(n), 12)


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_run(args) -> int:
    from .pipeline import run_scenario

    manifest = run_scenario(ScenarioConfig.from_json(args.config), root=args.output_root)
    _emit({"files": manifest.files, "seed": manifest.seed, "grid": manifest.grid})
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .pipeline import analyze, sweep_g

    config = ScenarioConfig.from_json(args.config)
    if args.sweep:
        _emit(sweep_g(config, parse_sweep(args.sweep)))
    else:
        _emit(analyze(config))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracles import run_oracle_suite

    report = run_oracle_suite(n_seeds=args.seeds, dt=args.dt, T=args.T)
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
    _emit(report)
    return EXIT_OK if report["passed"] else EXIT_ORACLE


def cmd_presets(args) -> int:
    for name, preset in PRESETS.items():
        print(f"{name}\t{preset['description']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsmooth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write CSV/JSON outputs")
    p.add_argument("config", help="scenario JSON file")
    p.add_argument("--output-root", default=None, help="directory that relative output paths resolve against")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="steady-state differentiability report")
    p.add_argument("config", help="scenario JSON file")
    p.add_argument("--sweep", default=None, metavar="g=a:b:step", help="sweep the preset parameter g")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("oracle", help="cross-oracle battery on random models")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--T", type=float, default=2.0)
    p.add_argument("--output", default=None, help="also write the JSON report here")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("presets", help="list built-in scenarios")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, RejectedModelError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except QSmoothError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
