"""Compare the separated (star) reconstruction with general-path cell functions
solved exactly at every macro point, and with the representative-grid path.

    python3 scripts/separated_vs_general.py [--cell-div 8] [--eps 1/4]
"""

import argparse
import time

import numpy as np

from homsfem.cells import PointwiseCells, solve_grid, solve_separated
from homsfem.coefficients import product_composite
from homsfem.config import parse_fraction
from homsfem.homogenize import ScaledField, build_representative_grid
from homsfem.macro import BoundaryData, Sources, prepare_macro_derivatives, solve_homogenized
from homsfem.mesh import Circle, build_fine_mesh, build_macro_mesh, build_unit_cell_mesh
from homsfem.metrics import relative_error
from homsfem.reconstruct import GridProvider, PointwiseProvider, ReconstructionInputs, SeparatedProvider, reconstruct

UNIT = ((0.0, 0.0), (1.0, 1.0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cell-div", type=int, default=8)
    ap.add_argument("--macro-div", type=int, default=16)
    ap.add_argument("--eps", default="1/4")
    ap.add_argument("--n-rep", type=int, default=5)
    ap.add_argument("--psi", default="example1_product")
    args = ap.parse_args()
    eps = parse_fraction(args.eps)
    inc = Circle((0.5, 0.5), 0.25)
    model = product_composite(args.psi, inc)
    cell = build_unit_cell_mesh(args.cell_div, inc)
    sep = solve_separated(cell, model)
    macro = prepare_macro_derivatives(solve_homogenized(
        build_macro_mesh(n_div=args.macro_div), ScaledField(model.psi, sep.star),
        Sources(500.0, 500.0, (1000.0, 1000.0)), BoundaryData()))
    fine = build_fine_mesh(UNIT, eps, 4, inc)

    def run(provider):
        t = time.perf_counter()
        r = reconstruct(ReconstructionInputs(eps, fine, macro, provider))
        return r, time.perf_counter() - t

    a, ta = run(SeparatedProvider(sep, cell, model.psi))
    b, tb = run(PointwiseProvider(PointwiseCells(cell, model, 1e-4), cell))
    grid = build_representative_grid(UNIT, args.n_rep)
    c, tc = run(GridProvider(solve_grid(cell, model, grid), cell))
    print(f"fine nodes {fine.n_nodes}; times separated {ta:.2f}s, pointwise {tb:.2f}s, grid {tc:.2f}s")
    for f in "Tcu":
        ea = relative_error(getattr(a, f), getattr(b, f), "L2")
        ec = relative_error(getattr(c, f), getattr(b, f), "L2")
        print(f"{f}: separated vs pointwise {ea:.2e}   grid(n_rep={args.n_rep}) vs pointwise {ec:.2e}")
    print("max |omega| used:", float(np.abs(model.psi(fine.nodes)).max()))


if __name__ == "__main__":
    main()
