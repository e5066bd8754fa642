"""Command-line entry point.

Usage::

    windgp [--config FILE] [--seed N] [--out DIR] [-v] <command> [options]
           [--<dotted.key> VALUE ...]

Commands: ``ingest``, ``scenarios``, ``forecast``, ``power-curve``, ``benchmark``.
Any configuration key can be overridden with ``--key value`` or ``--key=value``,
e.g. ``--optim.learning_rate 0.05``.  On failure a JSON object
``{"error": ..., "message": ..., ...}`` is printed to stderr and the exit code
is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments
from .config import flat_keys, load_config
from .errors import ConfigError, WindGPError

COMMANDS = ("ingest", "scenarios", "forecast", "power-curve", "benchmark")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _parser():
    p = _Parser(prog="windgp", description="GP wind-power forecasting experiments")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--seed", type=int, help="base seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="-v for progress, -vv for per-iteration logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", help="parse and filter SCADA data; write clean.csv and audit.json")
    sub.add_parser("scenarios", help="train every scenario x kernel cell; write the NLPD table")
    f = sub.add_parser("forecast", help="hourly and cumulative report for a trained scenario")
    f.add_argument("--scenario", type=int, help="1-based scenario index")
    f.add_argument("--selection", choices=("best", "per-restart-mean"))
    sub.add_parser("power-curve", help="power-curve scatter before and after filtering")
    b = sub.add_parser("benchmark", help="synthetic chirp / stationary benchmark")
    b.add_argument("--mode", choices=("chirp", "stationary", "both"))
    return p


def parse_overrides(extra):
    """``["--a.b", "1", "--c=2"]`` -> ``[("a.b", "1"), ("c", "2")]``."""
    known = set(flat_keys())
    pairs = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError("missing value", key=key)
            val = extra[i + 1]
            i += 2
        if key not in known:
            raise ConfigError("unknown configuration key", key=key)
        pairs.append((key, val))
    return pairs


def build(argv):
    args, extra = _parser().parse_known_args(argv)
    pairs = parse_overrides(extra)
    if args.seed is not None:
        pairs.append(("seed", str(args.seed)))
    if args.out is not None:
        pairs.append(("out", args.out))
    if args.command == "benchmark" and args.mode:
        pairs.append(("benchmark.mode", args.mode))
    if args.command == "forecast":
        if args.scenario is not None:
            pairs.append(("forecast.scenario", str(args.scenario)))
        if args.selection:
            pairs.append(("forecast.selection", args.selection))
    return args, load_config(args.config, pairs)


def run(args, cfg):
    if args.command == "ingest":
        audit = experiments.run_ingest(cfg)
        print(f"kept {audit.kept_rows} of {audit.input_rows} rows")
    elif args.command == "scenarios":
        table = experiments.run_scenarios(cfg)
        print(table.to_markdown(), end="")
    elif args.command == "forecast":
        report, _ = experiments.run_forecast_report(cfg)
        print(report.to_csv(), end="")
    elif args.command == "power-curve":
        audit = experiments.run_power_curve(cfg)
        print(audit.to_json())
    elif args.command == "benchmark":
        for out in experiments.run_synthetic_benchmark(cfg).values():
            print(experiments.benchmark_summary_line(out))


def _error_payload(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("key", "path", "column"):
        v = getattr(exc, attr, None)
        if v is not None:
            payload[attr] = str(v)
    if isinstance(exc, OSError) and exc.filename is not None:
        payload["path"] = str(exc.filename)
    return payload


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args, cfg = build(argv)
        level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
        logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")
        run(args, cfg)
    except (WindGPError, OSError, ValueError) as exc:
        print(json.dumps(_error_payload(exc)), file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
