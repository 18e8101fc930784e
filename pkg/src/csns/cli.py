"""Command-line entry point: ``csns run|sweep|check|describe``.

Exit codes: 0 all enabled checks pass, 1 invariant failure, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

from .config import load_config
from .errors import ConfigError, CSNSError
from .parallel import default_threads, thread_limit
from .presets import PRESETS
from .runner import EXIT_CONFIG, EXIT_NUMERICAL, check_run, continuation_sweep, run_scenario

OUTPUT_ROOT_ENV = "CSNS_OUTPUT_ROOT"


def _output_dir(args, name: str) -> Path:
    if args.output:
        return Path(args.output)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / name


def _add_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("scenario", help=f"preset name ({', '.join(PRESETS)}) or path to a TOML/JSON config or run manifest")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set physics.gamma=1.4 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csns", description="Cucker-Smale-Navier-Stokes simulator")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for row-parallel kernels (default: $CSNS_THREADS or 1)")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in (("run", "run a scenario (or its sweep) and write artifacts"), ("sweep", "run a continuation sweep")):
        p = sub.add_parser(verb, help=text)
        _add_source(p)
        p.add_argument("--output", "-o", default=None, help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<name> or runs/<name>)")
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    p = sub.add_parser("check", help="re-run the diagnostics on a stored trajectory directory")
    p.add_argument("directory")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    p = sub.add_parser("describe", help="print the resolved config as JSON")
    _add_source(p)
    return parser


def _report(summary: dict, out: Path | None) -> None:
    line = f"{summary.get('name', '?')}: {summary.get('status')} (exit {summary.get('exit_code')})"
    if out is not None:
        line += f" -> {out}"
    print(line)
    if summary.get("exit_code"):
        fail = {k: summary[k] for k in ("error", "failures") if summary.get(k)}
        if "failures" in fail:
            fail["failures"] = fail["failures"][:5]
        print(json.dumps(fail, indent=2, default=str))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads if args.threads is not None else default_threads()
    try:
        if args.verb == "describe":
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cfg = load_config(args.scenario, args.overrides)
            print(json.dumps(cfg.as_dict(), indent=2))
            return 0
        with thread_limit(threads):
            if args.verb == "check":
                oc = check_run(args.directory)
                _report(oc.summary, oc.output_dir)
                return oc.exit_code
            cfg = load_config(args.scenario, args.overrides)
            out = _output_dir(args, cfg.name)
            if args.verb == "sweep":
                oc = continuation_sweep(cfg, output_dir=out)
            else:
                oc = run_scenario(cfg, out)
            _report(oc.summary, out)
            return oc.exit_code
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CSNSError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
