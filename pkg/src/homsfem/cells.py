"""Auxiliary cell problems on the unit cell with homogeneous Dirichlet data.

Every problem has the form ``d/dy_j (A dU/dy) = s + d/dy_j q`` and is solved
in the weak form ``int A grad U . grad v = -int s v + int q . grad v``; the
divergence part of each right-hand side is always integrated by parts.

Storage conventions (nodes on the last axis for scalars, ``(.., N, 2)`` for
vector fields):

first order    H[a], L[a]             (2, N)
               X[h, a, :, k]          X_{kh}^{a}, shape (2, 2, N, 2)
               M, N                   (N, 2)
second order   H2[a1, a2], L2         (2, 2, N)
               R[a1], S               (2, N)
               P[h, a1, a2]           (2, 2, 2, N, 2)
               Q[h, a1]               (2, 2, N, 2)
               W, F                   (N, 2)
               Z[a1], G[a1]           (2, N, 2)
separated      Rt[a1, a2], St         (2, 2, N)
               Qt[h, a1, a2]          (2, 2, 2, N, 2)
               Wt[a1], Zt, Ft, Gt     (2, N, 2)
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coefficients import CoefficientBundle, MaterialModel
from .fem import Factorization, assemble_elasticity, assemble_scalar, divergence_load, element_load
from .homogenize import (
    HomogenizedField,
    RepresentativeGrid,
    element_mean,
    homogenized_from_fields,
    nodal_grad,
)
from .mesh import TriMesh

FIRST_FAMILIES = ("H", "L", "X", "M", "N")
SECOND_FAMILIES = ("H2", "R", "L2", "S", "P", "Q", "W", "Z", "F", "G")
SEPARATED_FAMILIES = ("H2", "L2", "P", "Rt", "St", "Qt", "Wt", "Zt", "Ft", "Gt")
VECTOR_FAMILIES = frozenset({"X", "M", "N", "P", "Q", "W", "Z", "F", "G", "Qt", "Wt", "Zt", "Ft", "Gt"})


class MissingStencilError(ValueError):
    pass


@dataclass
class CellSet:
    """Cell functions of one kind at one macro point (``x=None`` if x-free)."""

    x: np.ndarray | None
    fields: dict[str, np.ndarray]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fields[name]

    def max_abs(self) -> dict[str, float]:
        return {k: float(np.abs(v).max()) for k, v in self.fields.items()}


class FirstOrderCellSet(CellSet):
    pass


class SecondOrderCellSet(CellSet):
    pass


class CellOperators:
    """Factorized cell stiffness matrices for ``k``, ``g`` and ``D`` with the
    boundary dofs of the cell eliminated."""

    def __init__(self, mesh: TriMesh, bundle: CoefficientBundle):
        self.mesh = mesh
        self.bundle = bundle
        interior = np.setdiff1d(np.arange(mesh.n_nodes), mesh.boundary_nodes)
        self.free = {1: interior, 2: (2 * interior[:, None] + np.arange(2)).ravel()}
        self.matrices = {
            "k": assemble_scalar(mesh, bundle.k).matrix,
            "g": assemble_scalar(mesh, bundle.g).matrix,
            "D": assemble_elasticity(mesh, bundle.D).matrix,
        }
        self._fact: dict[str, Factorization] = {}

    def factor(self, which: str) -> Factorization:
        if which not in self._fact:
            f = self.free[2 if which == "D" else 1]
            self._fact[which] = Factorization(self.matrices[which][f][:, f])
        return self._fact[which]

    def solve(self, which: str, loads: np.ndarray) -> np.ndarray:
        """Solve for a stack of full-length loads ``(m, ndof)``.

        Returns ``(m, N)`` for scalar operators and ``(m, N, 2)`` for ``D``.
        """
        loads = np.atleast_2d(loads)
        ncomp = 2 if which == "D" else 1
        f = self.free[ncomp]
        out = np.zeros((loads.shape[0], ncomp * self.mesh.n_nodes))
        if len(f):
            out[:, f] = self.factor(which).solve(loads[:, f].T).T
        if ncomp == 2:
            return out.reshape(len(loads), self.mesh.n_nodes, 2)
        return out

    def residual(self, which: str, solution: np.ndarray, load: np.ndarray) -> float:
        """Relative residual of one solved problem on the free dofs."""
        f = self.free[2 if which == "D" else 1]
        u = solution.reshape(-1)
        r = (self.matrices[which] @ u - load)[f]
        b = np.linalg.norm(load[f])
        return float(np.linalg.norm(r) / (b if b > 0 else 1.0))


def weak_load(mesh: TriMesh, s=None, q=None, ncomp: int = 1) -> np.ndarray:
    """Full-length load of ``d(A dU) = s + div q``: ``-int s v + int q . grad v``."""
    F = np.zeros(ncomp * mesh.n_nodes)
    if s is not None:
        F -= element_load(mesh, s)
    if q is not None:
        F += divergence_load(mesh, q)
    return F


@dataclass
class CellState:
    """First-order cell functions and homogenized tensors at one macro point."""

    x: np.ndarray
    bundle: CoefficientBundle
    first: dict[str, np.ndarray]
    hom: dict[str, np.ndarray]
    ops: CellOperators | None = None
    _derived: dict = field(default_factory=dict, repr=False)

    def derived(self, mesh: TriMesh) -> dict[str, np.ndarray]:
        """Element arrays shared by the second-order right-hand sides.

        ``Pk[e, i, a] = k^_ia - k_ia - k_ij dH_a/dy_j`` (``Pg`` likewise),
        ``PD[e, i, j, h, a] = D^_ijha - D_ijha - D_ijkl dX_kh^a/dy_l``,
        ``PA[e, i, j] = D_ijkl (dM_k/dy_l + alpha_kl) - A^_ij`` (``PB`` likewise).
        """
        if self._derived:
            return self._derived
        c, f, t = self.bundle, self.first, self.hom
        gH = nodal_grad(mesh, f["H"])
        gL = nodal_grad(mesh, f["L"])
        gX = nodal_grad(mesh, f["X"])
        gM = nodal_grad(mesh, f["M"])
        gN = nodal_grad(mesh, f["N"])
        d = self._derived
        d["Pk"] = t["k"][None] - c.k - np.einsum("eij,aej->eia", c.k, gH)
        d["Pg"] = t["g"][None] - c.g - np.einsum("eij,aej->eia", c.g, gL)
        d["PD"] = t["D"][None] - c.D - np.einsum("eijkl,haekl->eijha", c.D, gX)
        d["PA"] = np.einsum("eijkl,ekl->eij", c.D, gM) + c.Dalpha - t["A"][None]
        d["PB"] = np.einsum("eijkl,ekl->eij", c.D, gN) + c.Dbeta - t["B"][None]
        return d


@dataclass
class Stencil:
    """Difference stencil in ``x`` around a centre state.

    ``plus[m]``/``minus[m]`` are states at ``x +- delta e_m`` (or grid
    neighbours); ``steps[m] = x_plus - x_minus``. A zero step means the
    ``x``-derivative along ``m`` is taken as zero.
    """

    center: CellState
    plus: Sequence[CellState | None]
    minus: Sequence[CellState | None]
    steps: Sequence[float]

    def diff(self, getter: Callable[[CellState], np.ndarray], m: int) -> np.ndarray:
        if self.steps[m] == 0.0:
            return np.zeros_like(getter(self.center))
        if self.plus[m] is None or self.minus[m] is None:
            raise MissingStencilError(f"stencil along axis {m} is incomplete")
        return (getter(self.plus[m]) - getter(self.minus[m])) / self.steps[m]


def first_order_fields(ops: CellOperators) -> dict[str, np.ndarray]:
    mesh, c = ops.mesh, ops.bundle
    H = ops.solve("k", [weak_load(mesh, q=-c.k[:, :, a]) for a in range(2)])
    L = ops.solve("g", [weak_load(mesh, q=-c.g[:, :, a]) for a in range(2)])
    loads = [weak_load(mesh, q=-c.D[:, :, :, h, a], ncomp=2) for h in range(2) for a in range(2)]
    loads += [weak_load(mesh, q=-c.Dalpha, ncomp=2), weak_load(mesh, q=-c.Dbeta, ncomp=2)]
    V = ops.solve("D", loads)
    return {"H": H, "L": L, "X": V[:4].reshape(2, 2, mesh.n_nodes, 2), "M": V[4], "N": V[5]}


def cell_state(cell_mesh: TriMesh, model: MaterialModel, x_I) -> CellState:
    """First-order solves plus homogenized tensors at ``x_I``."""
    x_I = np.asarray(x_I, dtype=float).reshape(2)
    bundle = model.bundle(x_I[None, :], cell_mesh.tags)
    ops = CellOperators(cell_mesh, bundle)
    first = first_order_fields(ops)
    hom = homogenized_from_fields(cell_mesh, bundle, first)
    return CellState(x_I, bundle, first, hom, ops)


def solve_first_order(cell_mesh: TriMesh, model: MaterialModel, x_I) -> FirstOrderCellSet:
    st = cell_state(cell_mesh, model, x_I)
    return FirstOrderCellSet(st.x, st.first)


def solve_first_order_separated(cell_mesh: TriMesh, micro_model: MaterialModel) -> FirstOrderCellSet:
    """x-independent first-order set of a star model (``M~``, ``N~`` in M, N)."""
    st = cell_state(cell_mesh, _star(micro_model), (0.0, 0.0))
    return FirstOrderCellSet(None, st.first)


def _star(model: MaterialModel) -> MaterialModel:
    if model.separable:
        return model.separated()[1]
    if model.psi.is_constant:
        return model
    raise ValueError("separated path needs an x-independent micro model")


def _common_second(mesh: TriMesh, st: CellState) -> tuple[dict, dict]:
    """Loads of the problems shared by the general and separated paths:
    ``H2``, ``L2``, ``P``, ``Z``, ``G``."""
    c, f = st.bundle, st.first
    d = st.derived(mesh)
    mH, mL = element_mean(mesh, f["H"]), element_mean(mesh, f["L"])
    mX, mM, mN = element_mean(mesh, f["X"]), element_mean(mesh, f["M"]), element_mean(mesh, f["N"])
    scalar = {
        "H2": [weak_load(mesh, d["Pk"][:, a1, a2], -c.k[:, :, a2] * mH[a1][:, None])
               for a1 in range(2) for a2 in range(2)],
        "L2": [weak_load(mesh, d["Pg"][:, a1, a2], -c.g[:, :, a2] * mL[a1][:, None])
               for a1 in range(2) for a2 in range(2)],
    }
    vector = {
        "P": [weak_load(mesh, d["PD"][:, :, a1, h, a2],
                        -np.einsum("eijk,ek->eij", c.D[..., a2], mX[h, a1]), ncomp=2)
              for h in range(2) for a1 in range(2) for a2 in range(2)],
        "Z": [weak_load(mesh, d["PA"][:, :, a1],
                        np.einsum("eijk,ek->eij", c.D[..., a1], mM) + c.Dalpha * mH[a1][:, None, None], ncomp=2)
              for a1 in range(2)],
        "G": [weak_load(mesh, d["PB"][:, :, a1],
                        np.einsum("eijk,ek->eij", c.D[..., a1], mN) + c.Dbeta * mL[a1][:, None, None], ncomp=2)
              for a1 in range(2)],
    }
    return scalar, vector


_SHAPES = {
    "H2": (2, 2), "L2": (2, 2), "R": (2,), "S": (2,), "Rt": (2, 2), "St": (2, 2),
    "P": (2, 2, 2), "Q": (2, 2), "Qt": (2, 2, 2), "W": (), "F": (), "Z": (2,), "G": (2,),
    "Wt": (2,), "Ft": (2,), "Zt": (2,), "Gt": (2,),
}


def _solve_groups(ops: CellOperators, scalar: dict, vector: dict) -> dict[str, np.ndarray]:
    N = ops.mesh.n_nodes
    out = {}
    for which, groups in (("k", {k: v for k, v in scalar.items() if k in ("H2", "R", "Rt")}),
                          ("g", {k: v for k, v in scalar.items() if k in ("L2", "S", "St")}),
                          ("D", vector)):
        names = list(groups)
        if not names:
            continue
        sols = ops.solve(which, [F for n in names for F in groups[n]])
        i = 0
        for n in names:
            m = len(groups[n])
            tail = (N, 2) if which == "D" else (N,)
            out[n] = sols[i:i + m].reshape(_SHAPES[n] + tail)
            i += m
    return out


def solve_second_order(cell_mesh: TriMesh, model: MaterialModel, x_I, stencil: Stencil) -> SecondOrderCellSet:
    """Ten second-order problems at ``x_I``; x-derivatives via ``stencil``."""
    st = stencil.center
    if st is None or not np.allclose(st.x, np.asarray(x_I, dtype=float)):
        raise MissingStencilError("stencil centre does not match x_I")
    mesh = cell_mesh
    ops = st.ops or CellOperators(mesh, st.bundle)
    c = st.bundle
    scalar, vector = _common_second(mesh, st)

    def der(getter):
        return [stencil.diff(getter, m) for m in range(2)]

    dPk = der(lambda s: s.derived(mesh)["Pk"])
    dPg = der(lambda s: s.derived(mesh)["Pg"])
    dPD = der(lambda s: s.derived(mesh)["PD"])
    dPA = der(lambda s: s.derived(mesh)["PA"])
    dPB = der(lambda s: s.derived(mesh)["PB"])
    # element means of x-derivatives of nodal first-order fields, index [m]
    dH = np.stack([element_mean(mesh, d) for d in der(lambda s: s.first["H"])])  # (m, a, E)
    dL = np.stack([element_mean(mesh, d) for d in der(lambda s: s.first["L"])])
    dX = np.stack([element_mean(mesh, d) for d in der(lambda s: s.first["X"])])  # (m, h, a, E, k)
    dM = np.stack([element_mean(mesh, d) for d in der(lambda s: s.first["M"])])  # (m, E, k)
    dN = np.stack([element_mean(mesh, d) for d in der(lambda s: s.first["N"])])

    scalar["R"] = [weak_load(mesh, dPk[0][:, 0, a] + dPk[1][:, 1, a],
                             -np.einsum("eij,je->ei", c.k, dH[:, a])) for a in range(2)]
    scalar["S"] = [weak_load(mesh, dPg[0][:, 0, a] + dPg[1][:, 1, a],
                             -np.einsum("eij,je->ei", c.g, dL[:, a])) for a in range(2)]
    vector["Q"] = [weak_load(mesh, dPD[0][:, :, 0, h, a] + dPD[1][:, :, 1, h, a],
                             -np.einsum("eijkl,lek->eij", c.D, dX[:, h, a]), ncomp=2)
                   for h in range(2) for a in range(2)]
    vector["W"] = [weak_load(mesh, dPA[0][:, :, 0] + dPA[1][:, :, 1],
                             np.einsum("eijkl,lek->eij", c.D, dM), ncomp=2)]
    vector["F"] = [weak_load(mesh, dPB[0][:, :, 0] + dPB[1][:, :, 1],
                             np.einsum("eijkl,lek->eij", c.D, dN), ncomp=2)]
    return SecondOrderCellSet(st.x, _solve_groups(ops, scalar, vector))


def solve_second_order_separated(cell_mesh: TriMesh, micro_model: MaterialModel,
                                 homogenized_star: dict | None = None,
                                 first_order: FirstOrderCellSet | None = None) -> SecondOrderCellSet:
    """Star-model second-order set; no x-derivatives appear."""
    star = _star(micro_model)
    mesh = cell_mesh
    bundle = star.bundle(np.zeros((1, 2)), mesh.tags)
    ops = CellOperators(mesh, bundle)
    first = first_order.fields if first_order is not None else first_order_fields(ops)
    hom = homogenized_star if homogenized_star is not None else homogenized_from_fields(mesh, bundle, first)
    st = CellState(np.zeros(2), bundle, first, hom, ops)
    c = bundle
    d = st.derived(mesh)
    scalar, vector = _common_second(mesh, st)
    mM, mN = element_mean(mesh, first["M"]), element_mean(mesh, first["N"])
    scalar["Rt"] = [weak_load(mesh, d["Pk"][:, a2, a1]) for a1 in range(2) for a2 in range(2)]
    scalar["St"] = [weak_load(mesh, d["Pg"][:, a2, a1]) for a1 in range(2) for a2 in range(2)]
    vector["Qt"] = [weak_load(mesh, d["PD"][:, :, a2, h, a1], ncomp=2)
                    for h in range(2) for a1 in range(2) for a2 in range(2)]
    vector["Wt"] = [weak_load(mesh, 2.0 * d["PA"][:, :, a1],
                              np.einsum("eijk,ek->eij", c.D[..., a1], mM), ncomp=2) for a1 in range(2)]
    vector["Ft"] = [weak_load(mesh, 2.0 * d["PB"][:, :, a1],
                              np.einsum("eijk,ek->eij", c.D[..., a1], mN), ncomp=2) for a1 in range(2)]
    out = _solve_groups(ops, scalar, vector)
    out["Zt"], out["Gt"] = out.pop("Z"), out.pop("G")
    return SecondOrderCellSet(None, out)


# --- representative grid driver -------------------------------------------


def _node_major(name: str, arr: np.ndarray) -> np.ndarray:
    """Move the node axis first: scalar ``(.., N) -> (N, ..)``, vector ``(.., N, 2) -> (N, .., 2)``."""
    return np.moveaxis(arr, -2 if name in VECTOR_FAMILIES else -1, 0)


@dataclass
class GridCellSets:
    """Cell functions and homogenized tensors on a representative grid.

    ``families[name]`` is node-major per point: ``(P, N, ...)``.
    """

    grid: RepresentativeGrid
    families: dict[str, np.ndarray]
    homogenized: HomogenizedField

    def set_at(self, p: int, name: str) -> np.ndarray:
        arr = self.families[name][p]
        return np.moveaxis(arr, 0, -2 if name in VECTOR_FAMILIES else -1)


def _pmap(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def solve_grid(cell_mesh: TriMesh, model: MaterialModel, grid: RepresentativeGrid,
               order: int = 2, threads: int = 1) -> GridCellSets:
    """Offline stage: first (and second) order sets at every grid point."""
    pts = grid.points
    states = _pmap(lambda p: cell_state(cell_mesh, model, pts[p]), range(len(pts)), threads)
    fams = {name: np.stack([_node_major(name, s.first[name]) for s in states]) for name in FIRST_FAMILIES}
    hom = HomogenizedField(grid, {k: np.stack([s.hom[k] for s in states]) for k in states[0].hom})
    if order >= 2:
        def second(p):
            nb = [grid.neighbours(p, m) for m in range(2)]
            sten = Stencil(states[p], [states[a] for a, _, _ in nb], [states[b] for _, b, _ in nb],
                           [s for _, _, s in nb])
            return solve_second_order(cell_mesh, model, pts[p], sten)
        sets = _pmap(second, range(len(pts)), threads)
        for name in SECOND_FAMILIES:
            fams[name] = np.stack([_node_major(name, s.fields[name]) for s in sets])
    return GridCellSets(grid, fams, hom)


@dataclass
class SeparatedCellSets:
    """Star cell functions (node-major) plus the star homogenized tensors."""

    families: dict[str, np.ndarray]
    star: dict[str, np.ndarray]


def solve_separated(cell_mesh: TriMesh, micro_model: MaterialModel, order: int = 2) -> SeparatedCellSets:
    star = _star(micro_model)
    bundle = star.bundle(np.zeros((1, 2)), cell_mesh.tags)
    ops = CellOperators(cell_mesh, bundle)
    first = first_order_fields(ops)
    hom = homogenized_from_fields(cell_mesh, bundle, first)
    fams = {n: _node_major(n, first[n]) for n in FIRST_FAMILIES}
    if order >= 2:
        sec = solve_second_order_separated(cell_mesh, star, hom, FirstOrderCellSet(None, first))
        fams.update({n: _node_major(n, v) for n, v in sec.fields.items()})
    return SeparatedCellSets(fams, hom)


class PointwiseCells:
    """General-path cell functions solved at arbitrary macro points, with a
    small central-difference step in ``x`` (used as an exact-x oracle)."""

    def __init__(self, cell_mesh: TriMesh, model: MaterialModel, delta: float = 1e-4, order: int = 2):
        self.mesh, self.model, self.delta, self.order = cell_mesh, model, delta, order
        self._states: dict[tuple, CellState] = {}
        self._sets: dict[tuple, dict] = {}

    def _state(self, x) -> CellState:
        key = tuple(np.round(x, 14))
        if key not in self._states:
            self._states[key] = cell_state(self.mesh, self.model, x)
        return self._states[key]

    def fields_at(self, x) -> dict[str, np.ndarray]:
        x = np.asarray(x, dtype=float)
        key = tuple(np.round(x, 14))
        if key in self._sets:
            return self._sets[key]
        st = self._state(x)
        out = {n: _node_major(n, st.first[n]) for n in FIRST_FAMILIES}
        if self.order >= 2:
            e = np.eye(2) * self.delta
            sten = Stencil(st, [self._state(x + e[m]) for m in range(2)],
                           [self._state(x - e[m]) for m in range(2)], [2 * self.delta] * 2)
            sec = solve_second_order(self.mesh, self.model, x, sten)
            out.update({n: _node_major(n, v) for n, v in sec.fields.items()})
            for m in range(2):  # stencil neighbours are used once
                for s in (x + e[m], x - e[m]):
                    self._states.pop(tuple(np.round(s, 14)), None)
        out["_hom"] = st.hom
        self._sets[key] = out
        return out
