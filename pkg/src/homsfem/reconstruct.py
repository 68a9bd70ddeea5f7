"""Lower- and higher-order two-scale reconstructions on the fine mesh.

Cell functions are supplied by a provider that returns, for macro points
``x`` and micro points ``y``, the value of each family at ``(x, y)``. The
general path interpolates stored grid sets in ``x``; the separated path maps
the x-free star functions onto the general families with the analytic
weight ``omega`` and its gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import GridCellSets, PointwiseCells, SeparatedCellSets
from .coefficients import WeightFunction
from .fem import FieldSolution
from .macro import CoupledSolution
from .mesh import MacroMesh, TriMesh, micro_coordinates

ORDERS = {"homogenized": 0, "loms": 1, "homs": 2}
FIRST = ("H", "L", "X", "M", "N")
SECOND = ("H2", "R", "L2", "S", "P", "Q", "W", "Z", "F", "G")


class GridProvider:
    """Multilinear in ``x`` between grid sets, P1 in ``y`` on the cell mesh."""

    def __init__(self, sets: GridCellSets, cell_mesh: TriMesh):
        self.sets, self.cell_mesh = sets, cell_mesh

    def evaluate(self, names, x, y) -> dict[str, np.ndarray]:
        corners, w = self.sets.grid.weights(x)
        elem, bary = self.cell_mesh.locate(y)
        nodes = self.cell_mesh.elements[elem]
        out = {}
        for n in names:
            F = self.sets.families[n]
            vals = F[corners[:, :, None], nodes[:, None, :]]  # (m, 4, 3, ...)
            out[n] = np.einsum("mc,ma,mca...->m...", w, bary, vals)
        return out


class PointwiseProvider:
    """General-path families solved at each distinct macro point."""

    def __init__(self, cells: PointwiseCells, cell_mesh: TriMesh):
        self.cells, self.cell_mesh = cells, cell_mesh

    def evaluate(self, names, x, y) -> dict[str, np.ndarray]:
        x = np.atleast_2d(x)
        elem, bary = self.cell_mesh.locate(y)
        nodes = self.cell_mesh.elements[elem]
        ux, inv = np.unique(np.round(x, 14), axis=0, return_inverse=True)
        inv = inv.ravel()
        out = {}
        for k, xk in enumerate(ux):
            sel = np.flatnonzero(inv == k)
            f = self.cells.fields_at(xk)
            for n in names:
                vals = np.einsum("ma,ma...->m...", bary[sel], f[n][nodes[sel]])
                if n not in out:
                    out[n] = np.zeros((len(x),) + vals.shape[1:])
                out[n][sel] = vals
        return out


class SeparatedProvider:
    """Closed-form combination for ``a(x, y) = omega(x) a*(y)``.

    ``R = (d_b omega / omega) R~[., b]``, ``Q`` likewise, ``M = omega M~``,
    ``N = omega N~``, ``W = d_a omega W~[a]``, ``F`` likewise,
    ``Z = omega Z~``, ``G = omega G~``; ``H, L, X, H2, L2, P`` are shared.
    """

    def __init__(self, sets: SeparatedCellSets, cell_mesh: TriMesh, omega: WeightFunction):
        self.sets, self.cell_mesh, self.omega = sets, cell_mesh, omega

    def _star(self, n, nodes, bary):
        return np.einsum("ma,ma...->m...", bary, self.sets.families[n][nodes])

    def evaluate(self, names, x, y) -> dict[str, np.ndarray]:
        x = np.atleast_2d(x)
        w = self.omega(x)
        if np.any(w == 0):
            bad = x[np.flatnonzero(w == 0)[0]]
            raise ZeroDivisionError(f"omega vanishes at x = {bad}")
        gw = self.omega.gradient(x, 2)
        elem, bary = self.cell_mesh.locate(y)
        nodes = self.cell_mesh.elements[elem]
        s = lambda n: self._star(n, nodes, bary)
        out = {}
        for n in names:
            if n in ("H", "L", "X", "H2", "L2", "P"):
                out[n] = s(n)
            elif n in ("M", "N", "Z", "G"):
                v = s(n if n in ("M", "N") else n + "t")
                out[n] = w.reshape((-1,) + (1,) * (v.ndim - 1)) * v
            elif n in ("R", "S"):
                out[n] = np.einsum("mb,mab->ma", gw / w[:, None], s(n + "t"))
            elif n == "Q":
                out[n] = np.einsum("mb,mhabk->mhak", gw / w[:, None], s("Qt"))
            elif n in ("W", "F"):
                out[n] = np.einsum("ma,mak->mk", gw, s(n + "t"))
            else:
                raise KeyError(n)
        return out


@dataclass
class ReconstructionInputs:
    epsilon: float
    fine_mesh: MacroMesh
    macro: CoupledSolution
    provider: object
    order: str = "homs"
    path: str = "general"

    def validate(self) -> None:
        if self.order not in ORDERS:
            raise ValueError(f"unknown order {self.order!r}")
        fm = self.fine_mesh
        if fm.epsilon is not None and not np.isclose(fm.epsilon, self.epsilon):
            raise ValueError(f"fine mesh was built for eps={fm.epsilon}, not {self.epsilon}")
        need = ORDERS[self.order]
        for name, f in self.macro.fields().items():
            if need >= 1 and f.gradient is None:
                raise ValueError(f"macro field {name} lacks recovered gradients")
            if need >= 2 and f.hessian is None:
                raise ValueError(f"macro field {name} lacks recovered Hessians")


def _macro_at(sol: FieldSolution, x: np.ndarray, order: int) -> tuple:
    mesh = sol.mesh
    v = mesh.interpolate(sol.values, x)
    g = mesh.interpolate(sol.gradient, x) if order >= 1 else None
    h = mesh.interpolate(sol.hessian, x) if order >= 2 else None
    return v, g, h


def combine(eps: float, order: int, fam: dict, T, c, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-scale expansion from macro values/derivatives and cell families.

    ``T = (T0, dT0, d2T0)`` etc. with shapes ``(m, 1)``, ``(m, 1, 2)``,
    ``(m, 1, 2, 2)``; ``u`` uses 2 components.
    """
    T0, gT, hT = T[0][:, 0], (T[1][:, 0] if T[1] is not None else None), (T[2][:, 0] if T[2] is not None else None)
    c0, gc, hc = c[0][:, 0], (c[1][:, 0] if c[1] is not None else None), (c[2][:, 0] if c[2] is not None else None)
    u0, gu, hu = u
    Tr, cr, ur = T0.copy(), c0.copy(), u0.copy()
    if order >= 1:
        Tr += eps * np.einsum("ma,ma->m", fam["H"], gT)
        cr += eps * np.einsum("ma,ma->m", fam["L"], gc)
        ur += eps * (np.einsum("mhai,mha->mi", fam["X"], gu)
                     - fam["M"] * T0[:, None] - fam["N"] * c0[:, None])
    if order >= 2:
        e2 = eps**2
        Tr += e2 * (np.einsum("mab,mab->m", fam["H2"], hT) + np.einsum("ma,ma->m", fam["R"], gT))
        cr += e2 * (np.einsum("mab,mab->m", fam["L2"], hc) + np.einsum("ma,ma->m", fam["S"], gc))
        ur += e2 * (np.einsum("mhabi,mhab->mi", fam["P"], hu)
                    + np.einsum("mhai,mha->mi", fam["Q"], gu)
                    + fam["W"] * T0[:, None] + np.einsum("mai,ma->mi", fam["Z"], gT)
                    + fam["F"] * c0[:, None] + np.einsum("mai,ma->mi", fam["G"], gc))
    return Tr, cr, ur


def reconstruct(inputs: ReconstructionInputs, chunk: int = 20000) -> CoupledSolution:
    """Evaluate the selected expansion at every fine-mesh node."""
    inputs.validate()
    order = ORDERS[inputs.order]
    fm = inputs.fine_mesh
    x = fm.nodes
    y = micro_coordinates(x, inputs.epsilon, fm.lo)
    names = FIRST + (SECOND if order >= 2 else ()) if order >= 1 else ()
    T_out, c_out, u_out = np.empty(len(x)), np.empty(len(x)), np.empty((len(x), 2))
    for s in range(0, len(x), chunk):
        sl = slice(s, s + chunk)
        xs = x[sl]
        T = _macro_at(inputs.macro.T, xs, order)
        c = _macro_at(inputs.macro.c, xs, order)
        u = _macro_at(inputs.macro.u, xs, order)
        fam = inputs.provider.evaluate(names, xs, y[sl]) if names else {}
        T_out[sl], c_out[sl], u_out[sl] = combine(inputs.epsilon, order, fam, T, c, u)
    return CoupledSolution(FieldSolution(fm, T_out), FieldSolution(fm, c_out), FieldSolution(fm, u_out))


def reconstruct_separated(inputs: ReconstructionInputs, sets: SeparatedCellSets | None = None,
                          cell_mesh: TriMesh | None = None, omega: WeightFunction | None = None) -> CoupledSolution:
    """Separated-path reconstruction; builds the provider if parts are given."""
    if sets is not None:
        inputs.provider = SeparatedProvider(sets, cell_mesh, omega)
    if not isinstance(inputs.provider, SeparatedProvider):
        raise TypeError("separated reconstruction needs a SeparatedProvider")
    inputs.path = "separated"
    return reconstruct(inputs)
