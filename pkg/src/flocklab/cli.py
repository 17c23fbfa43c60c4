"""Command-line entry point: ``flocklab <command> [--preset NAME | --config PATH] ...``."""

import argparse
import json
import sys

from . import _backend, runner
from .errors import BlowUpError, ConfigError, FlocklabError
from .config import expand_preset, validate
from .io import format_report
from .presets import PRESETS

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXIT_BLOWUP = 3


def _parser():
    ap = argparse.ArgumentParser(prog="flocklab", description="p-alignment flocking simulations and diagnostics")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in list(runner.COMMANDS) + ["verify"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="PATH", help="JSON config file")
        sp.add_argument("--preset", metavar="NAME", choices=sorted(PRESETS), help="named scenario")
        sp.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--dry-run", action="store_true", help="validate and print the expanded config only")
        sp.add_argument("--threads", type=int, default=None, help="worker threads for the pair kernels")
        if name == "verify":
            sp.add_argument("--only", metavar="N", type=int, action="append",
                            help="run only these criterion numbers")
    return ap


def load_config(args):
    """Build the raw dict from --config/--preset plus overrides, then validate."""
    raw = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc.strerror}"])
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"])
        if not isinstance(raw, dict):
            raise ConfigError(["config must be a JSON object"])
    if args.preset:
        raw = dict(raw, preset=args.preset)
    if not raw:
        raise ConfigError(["give --config PATH or --preset NAME"])
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = args.out
    return validate(expand_preset(raw))


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    threads = args.threads or _backend.default_threads()

    if args.command == "verify":
        from .acceptance import run_all
        results = run_all(only=args.only, threads=threads, echo=print)
        return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL

    try:
        cfg = load_config(args)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    if args.dry_run:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        result = runner.COMMANDS[args.command](cfg, cfg.out, threads)
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FlocklabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    if "report" in result:
        print(format_report(result["report"]))
    elif "max_rel_error" in result:
        print(format_report([("max_rel_error", result["max_rel_error"])]))
    if cfg.out:
        print(f"wrote {cfg.out}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
