"""Command-line front door: ``sharpsolv <verb> --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as cfgmod
from .experiments import KINDS, ExperimentSpec, run

log = logging.getLogger("sharpsolv")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sharpsolv",
                                description="Sharp-interface implicit-solvent experiments.")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in KINDS:
        s = sub.add_parser(verb, help=f"run a {verb} experiment")
        s.add_argument("--config", required=True, metavar="PATH",
                       help="TOML experiment document")
        s.add_argument("--out", default="out", metavar="DIR", help="output directory")
        s.add_argument("--threads", type=int, default=1, metavar="N",
                       help="worker threads for sweeps and transforms")
        s.add_argument("--seed", type=int, default=None, metavar="S",
                       help="override the document seed")
        s.add_argument("--paper-convention", action="store_true",
                       help="report H^-1 norms without the 1/(4 pi) Green's constant")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        spec = ExperimentSpec.from_file(args.config, seed=args.seed)
    except (cfgmod.ConfigError, OSError) as exc:
        print(f"sharpsolv: error: {exc}", file=sys.stderr)
        return 2
    if spec.kind != args.verb:
        print(f"sharpsolv: error: config kind {spec.kind!r} does not match verb {args.verb!r}",
              file=sys.stderr)
        return 2
    spec.doc.setdefault("options", {})["paper_convention"] = args.paper_convention
    try:
        status = run(spec, args.out, threads=args.threads)
    except cfgmod.ConfigError as exc:  # problems only visible once the run starts
        print(f"sharpsolv: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"sharpsolv: {args.verb} failed: {exc}", file=sys.stderr)
        return 1
    log.info("wrote %s/report.csv and report.json", args.out)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
