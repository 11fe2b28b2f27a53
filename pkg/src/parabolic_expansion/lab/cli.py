"""Command-line entry point: ``parabolic-lab <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, ModelError, NumericalError
from .config import load_config
from .experiments import RUNNERS, write_result
from .presets import PRESETS, preset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parabolic-lab", description="Asymptotic expansion experiments for parabolic PDEs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("price", "density", "convergence", "bootstrap", "validate-config"):
        c = sub.add_parser(name)
        c.add_argument("--config", required=True, help="experiment configuration (INI)")
        c.add_argument("--out", help="CSV output path (overrides [output] path)")
        c.add_argument("--threads", type=int, default=1)
        c.add_argument("--seed", type=int, help="Monte Carlo seed (overrides [oracle] seed)")
        c.add_argument("--oracle", choices=("fd", "mc", "exact"))
        c.add_argument("--quiet", action="store_true")
    lp = sub.add_parser("list-presets")
    lp.add_argument("--quiet", action="store_true")
    return p


def _report(result, quiet: bool) -> None:
    if quiet:
        return
    print(f"{result.kind}: {len(result.rows)} rows in {result.seconds:.2f}s")
    for key, info in result.summary.items():
        if isinstance(info, dict) and "slope" in info:
            status = {True: "pass", False: "FAIL", None: "floor"}[info.get("passed")]
            print(f"  N={key}: slope {info['slope']:.3f} (expected {info['expected']:.2f}) {status}")
        else:
            print(f"  {key}: {info}")


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "list-presets":
        for name in PRESETS:
            p = preset(name)
            print(f"{name:16s} d={p.dim}  {p.description}")
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.oracle:
            cfg.oracle = args.oracle
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            cfg.output = args.out
        cfg.validate()
        if args.command == "validate-config":
            if not args.quiet:
                print(f"{args.config}: ok")
            return EXIT_OK
        result = RUNNERS[args.command](cfg, threads=max(1, args.threads))
        if cfg.output:
            write_result(result, cfg.output, cfg)
        else:
            import csv

            w = csv.DictWriter(sys.stdout, fieldnames=result.columns)
            w.writeheader()
            w.writerows(result.rows)
        _report(result, args.quiet)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
