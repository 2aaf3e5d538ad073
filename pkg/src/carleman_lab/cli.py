"""Command-line front end.

Subcommands: ``validate``, ``run``, ``certify-barriers``, ``report``, ``plot``.
Exit codes: 0 success, 2 configuration error, 3 solver error, 4 a diagnostic
verdict failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .barriers import BarrierError
from .config import ConfigError, load
from .interaction import SingularRateError
from .kinetic import CollisionError
from .limit import LimitSolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_DIAGNOSTIC = 0, 2, 3, 4

SOLVER_ERRORS = (CollisionError, LimitSolverError, SingularRateError, BarrierError, FloatingPointError)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="carleman-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True, needs_out=True):
        if needs_config:
            sp.add_argument("--config", required=True, type=Path, help="experiment JSON")
        if needs_out:
            sp.add_argument("--out", required=True, type=Path, help="artifact directory")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--threads", type=int, default=1, help="concurrent sweep members")

    common(sub.add_parser("validate", help="check a config and print the normalised form"), needs_out=False)
    common(sub.add_parser("run", help="run sweep, limit solver and diagnostics"))
    common(sub.add_parser("certify-barriers", help="barrier sign certificates only"))
    common(sub.add_parser("report", help="summarise verdicts of a finished run"), needs_config=False)
    common(sub.add_parser("plot", help="write SVG plots for a finished run"), needs_config=False)
    return p


def _load(args):
    cfg = load(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError([("--seed", "must be nonnegative")])
        cfg.seed = args.seed
        cfg.raw["seed"] = args.seed
    for w in cfg.warnings:
        logging.getLogger("carleman_lab").warning(w)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import harness

    try:
        if args.command == "validate":
            cfg = _load(args)
            print(cfg.normalized_json())
            return EXIT_OK
        if args.command == "run":
            cfg = _load(args)
            _, report = harness.run_experiment(cfg, args.out, threads=args.threads)
            for line in harness.summarize(args.out)[0]:
                print(line)
            return EXIT_OK if report.passed else EXIT_DIAGNOSTIC
        if args.command == "certify-barriers":
            cfg = _load(args)
            if cfg.lower is None and cfg.upper is None:
                raise ConfigError([("barriers", "no barrier to certify")])
            if cfg.certify is None:
                cfg.certify = {}
            writer = harness.ArtifactWriter(args.out)
            writer.text("config.json", cfg.normalized_json() + "\n")
            certs = harness.certify_barriers(cfg, writer)
            writer.write_manifest()
            ok = True
            for c in certs:
                ok &= bool(c["passed"])
                print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['case']} {c['kind']} eps={c['epsilon']} "
                      f"max_residual={c['max_residual']:.3g} coefficient={c['certified_coefficient']}")
            return EXIT_OK if ok else EXIT_DIAGNOSTIC
        if args.command == "report":
            lines, ok = harness.summarize(args.out)
            print("\n".join(lines))
            return EXIT_OK if ok else EXIT_DIAGNOSTIC
        written = harness.emit_plots(args.out)
        for p in written:
            print(p)
        return EXIT_OK
    except ConfigError as exc:
        for path, msg in exc.errors:
            print(f"config error: {path}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
