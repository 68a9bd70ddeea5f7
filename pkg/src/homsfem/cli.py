"""Command-line runner: ``homsfem [STAGE ...] --config FILE --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import STAGES, ConfigError, dump_config, load_config, parse_fraction
from .pipeline import MissingCacheError, Pipeline


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homsfem", description=__doc__)
    p.add_argument("stages", nargs="*", help=f"stages to run, any of {', '.join(STAGES)}")
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--out", default="runs/out", help="output directory")
    p.add_argument("--stages", dest="stage_list", default=None, help="comma-separated stages")
    p.add_argument("--eps", default=None, help="comma-separated eps values for 'convergence', e.g. 1/4,1/8")
    p.add_argument("--threads", type=int, default=1, help="worker threads for the cell stage")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    stages = list(args.stages)
    if args.stage_list:
        stages += [s.strip() for s in args.stage_list.split(",") if s.strip()]
    bad = [s for s in stages if s not in STAGES]
    if bad:
        print(f"unknown stages: {bad}", file=sys.stderr)
        return 2
    stages = stages or cfg["stages"]
    eps = [parse_fraction(e) for e in args.eps.split(",")] if args.eps else None
    if eps and "convergence" not in stages:
        stages.append("convergence")
    pipe = Pipeline(cfg, args.out, threads=args.threads)
    dump_config(cfg, pipe.out / "config.normalized.yaml")
    try:
        man = pipe.run(stages, eps)
    except MissingCacheError as exc:
        print(str(exc), file=sys.stderr)
        return 3
    print(f"stages: {', '.join(man['stages'])}  cache: {'hit' if man['cache_hit'] else 'miss'} ({man['cache_key']})")
    if "report" in pipe._memo:
        rep = pipe._memo["report"]
        for f in "Tcu":
            print(f"{f}  H1: " + "  ".join(f"{rep[f'{f}errorH1{o}']:.5f}" for o in range(3)))
    if "slopes" in man:
        print("fitted slopes (homogenized, LOMS, HOMS): " + ", ".join(f"{man['slopes'][o]:.3f}" for o in range(3)))
    print((pipe.out / "cost_table.md").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
