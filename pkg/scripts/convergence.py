"""Error of the homogenized, LOMS and HOMS temperature against eps, with fitted log-log slopes.

    python3 scripts/convergence.py [--eps 1/4,1/8,1/16] [--out runs/convergence]
"""

import argparse
from pathlib import Path

from homsfem.config import load_config, parse_fraction
from homsfem.pipeline import Pipeline

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "convergence_smooth.yaml"))
    ap.add_argument("--eps", default=None)
    ap.add_argument("--out", default="runs/convergence")
    args = ap.parse_args()
    cfg = load_config(args.config)
    eps = [parse_fraction(e) for e in args.eps.split(",")] if args.eps else cfg["convergence"]["eps"]
    pipe = Pipeline(cfg, args.out)
    pipe.run(["cell", "convergence"], eps)
    print((pipe.out / "convergence.csv").read_text())


if __name__ == "__main__":
    main()
