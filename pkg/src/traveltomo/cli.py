"""Command-line front end: one subcommand per pipeline stage plus ``run`` and ``sweep``.

Exit codes: 0 success, 1 usage or configuration error, 2 stage failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields

from . import __version__
from .config import (ConfigError, PipelineConfig, dump_config, external_key, load_config,
                     parse_value)
from .pipeline import (STAGE_FUNCS, STAGES, SWEEP_PARAMS, StageError, format_sweep_table,
                       parse_sweep_values, run_all, sweep)

EXIT_OK, EXIT_USAGE, EXIT_STAGE = 0, 1, 2
THREADS_ENV = "TRAVELTOMO_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default; usage errors map to 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _flag_type(key: str):
    # same parsing as config files, so fractions such as 1/15 are accepted
    def convert(text):
        try:
            return parse_value(key, text)
        except ConfigError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    convert.__name__ = key
    return convert


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (overrides the config file)")
    for f in fields(PipelineConfig):
        name = external_key(f.name)
        g.add_argument(f"--{name.replace('_', '-')}", dest=f"cfg_{f.name}", type=_flag_type(f.name),
                       default=None, metavar=f.type.upper(),
                       help=f"default {f.default!r}")


def _add_common(p: argparse.ArgumentParser, workdir=True) -> None:
    if workdir:
        p.add_argument("--workdir", "-w", required=True, help="directory holding stage outputs")
    p.add_argument("--config", "-c", default=None, help="key = value configuration file")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    _add_config_flags(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="traveltomo",
                     description="3-D travel-time tomography by a globally convergent "
                                 "weighted least-squares method.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "phantom": "tabulate the test medium on the forward and inversion grids",
        "forward": "compute first-arrival times on the boundary for every source",
        "noise": "add uniform noise of amplitude delta * max|g| to the travel times",
        "project": "project boundary data onto the truncated basis",
        "reconstruct": "minimise the weighted functional and recover n",
        "evaluate": "score the reconstruction against the phantom",
        "export": "write VTK volumes and mid-plane CSV slices",
    }
    for stage in STAGES:
        _add_common(sub.add_parser(stage, help=helps[stage]))
    p = sub.add_parser("run", help="run every stage in order")
    p.add_argument("--stages", default=",".join(STAGES),
                   help="comma-separated subset of stages (default: all)")
    _add_common(p)
    p = sub.add_parser("sweep", help="reconstruct for several values of lambda or N")
    p.add_argument("parameter", choices=SWEEP_PARAMS)
    p.add_argument("values", nargs="*", help="values, space or comma separated")
    _add_common(p)
    p = sub.add_parser("config", help="print the effective configuration")
    p.add_argument("--output", "-o", default=None, help="write to this file instead")
    _add_common(p, workdir=False)
    return parser


def resolve_config(args) -> PipelineConfig:
    overrides = {name[4:]: val for name, val in vars(args).items()
                 if name.startswith("cfg_") and val is not None}
    if args.config:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file {args.config} not found")
        return load_config(args.config, overrides)
    return PipelineConfig(**overrides)


def _threads():
    env = os.environ.get(THREADS_ENV)
    if env is None:
        return None
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1")
    return n


def _dispatch(args, cfg: PipelineConfig) -> int:
    if args.command == "config":
        if args.output:
            dump_config(cfg, args.output)
        else:
            for f in fields(cfg):
                print(f"{external_key(f.name)} = {getattr(cfg, f.name)!r}")
        return EXIT_OK
    threads = _threads()
    if args.command == "sweep":
        try:
            values = parse_sweep_values(" ".join(args.values))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        rows = sweep(cfg, args.workdir, args.parameter, values)
        print(format_sweep_table(args.parameter, rows), end="")
        return EXIT_OK
    if args.command == "run":
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        bad = [s for s in stages if s not in STAGES]
        if bad:
            raise UsageError(f"unknown stage(s): {', '.join(bad)}")
        for stage in stages:
            _run_stage(stage, cfg, args.workdir, threads)
        return EXIT_OK
    _run_stage(args.command, cfg, args.workdir, threads)
    return EXIT_OK


def _run_stage(stage, cfg, workdir, threads):
    if stage == "forward":
        STAGE_FUNCS[stage](cfg, workdir, threads=threads)
    elif stage == "evaluate":
        metrics = STAGE_FUNCS[stage](cfg, workdir)
        for key, val in metrics.as_dict().items():
            print(f"{key} = {val}")
    else:
        run_all(cfg, workdir, [stage])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return _dispatch(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"traveltomo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"traveltomo: stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"traveltomo: stage failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
