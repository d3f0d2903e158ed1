"""Command-line interface: ``susphom <command> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed built-in assertion. ``SUSPHOM_OUT`` overrides ``--out``.
"""

import argparse
import json
import logging
import os
import sys

from ..errors import AssertionFailure, ConfigError, SusphomError
from .config import load_config
from .experiments import run_experiment
from .plots import emit_plots
from .records import read_record, write_record

log = logging.getLogger("susphom")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ASSERTION = 0, 2, 3, 4

COMMANDS = {
    "sample": "sample a point process and periodize it",
    "solve": "solve the stresslet system of one configuration",
    "cluster": "cluster-expansion exactness on small configurations",
    "einstein": "dilute Einstein sweep",
    "dilation": "cluster coefficients under dilation",
    "bernoulli": "Bernoulli-thinned averages as polynomials in p",
    "example26": "many-point intensities of the parent-satellite process",
    "bg": "second-order pair integrals on correlation models",
    "convergence": "Cauchy differences of readings across periods",
}


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    p.add_argument("--out", metavar="DIR", help="output directory (default ./susphom-out/<command>)")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed override")
    p.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads (speed only)")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")


def build_parser():
    parser = argparse.ArgumentParser(prog="susphom", description="Suspension homogenization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _common(p)
        if name == "solve":
            p.add_argument("--configuration", metavar="FILE",
                           help="configuration JSON written by 'sample'")
    p = sub.add_parser("plot", help="re-emit SVG figures from result directories")
    p.add_argument("dirs", nargs="+", metavar="DIR", help="directories holding result.json")
    p.add_argument("--out", metavar="DIR", help="figure directory (default: each input directory)")
    p.add_argument("--verbose", action="store_true")
    return parser


def _out_dir(args, default):
    return os.environ.get("SUSPHOM_OUT") or args.out or default


def _run(args):
    out = _out_dir(args, os.path.join("susphom-out", args.command))
    if args.seed is not None and not 0 <= args.seed < 1 << 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg = load_config(args.config, kind=args.command, out=out, threads=args.threads, seed=args.seed)
    if args.command == "solve" and args.configuration:
        try:
            with open(args.configuration) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {args.configuration!r}: {exc}") from None
        cfg = load_config({"kind": "solve", "params": {**cfg.params, "configuration": doc}},
                          out=out, threads=args.threads)
    log.info("running %s (config %s) into %s", cfg.kind, cfg.digest()[:12], out)
    try:
        rec = run_experiment(cfg)
    except AssertionFailure as exc:
        rec = getattr(exc, "record", None)
        if rec is not None:
            write_record(rec, out, threads=args.threads)
        raise
    paths = write_record(rec, out, threads=args.threads)
    if cfg.kind == "sample":
        path = os.path.join(out, "configuration.json")
        with open(path, "w") as fh:
            json.dump(rec.summary["configuration"], fh, indent=2)
            fh.write("\n")
        paths.append(path)
    paths += emit_plots([rec], out)
    for path in paths:
        log.info("wrote %s", path)
    print(json.dumps({"kind": rec.kind, "config_digest": rec.digest, "out": out,
                      "summary": rec.to_dict()["summary"]}, indent=2, sort_keys=True))


def _plot(args):
    for d in args.dirs:
        rec = read_record(d)
        out = _out_dir(args, d)
        paths = emit_plots([rec], out)
        if not paths:
            raise ConfigError(f"no data: nothing to plot for a {rec.kind!r} record")
        for path in paths:
            print(path)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            _plot(args)
        else:
            _run(args)
    except AssertionFailure as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return EXIT_ASSERTION
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SusphomError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
