"""P1 finite-element kernel on triangles.

Scalar unknowns use one dof per node. Vector unknowns interleave components,
``dof = ncomp * node + component``. Coefficients are taken constant per
element (centroid value); point loads use the 3-point vertex rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MacroMesh, TriMesh

SOLVER_RTOL = 1e-10


class SolverError(RuntimeError):
    pass


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    constraints: dict[int, float] = field(default_factory=dict)
    ncomp: int = 1

    @property
    def ndof(self) -> int:
        return self.matrix.shape[0]


@dataclass
class ConstrainedSystem:
    """Reduced system on the free dofs after symmetric Dirichlet elimination."""

    matrix: sp.csc_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    ndof: int

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        reduced = np.asarray(reduced)
        out = np.zeros((self.ndof,) + reduced.shape[1:])
        out[self.free] = reduced
        out[self.fixed] = (
            self.fixed_values if reduced.ndim == 1 else self.fixed_values[:, None]
        )
        return out


@dataclass
class FieldSolution:
    mesh: TriMesh
    values: np.ndarray  # (N, ncomp)
    gradient: np.ndarray | None = None  # (N, ncomp, 2)
    hessian: np.ndarray | None = None  # (N, ncomp, 2, 2)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.mesh.n_nodes:
            raise ValueError("value array does not match the mesh node count")
        self.values = v

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_dofs(cls, mesh: TriMesh, dofs: np.ndarray, ncomp: int) -> "FieldSolution":
        return cls(mesh, np.asarray(dofs).reshape(mesh.n_nodes, ncomp))

    @property
    def dofs(self) -> np.ndarray:
        return self.values.reshape(-1)

    def element_gradients(self) -> np.ndarray:
        """Constant P1 gradients per element, ``(E, ncomp, 2)``."""
        vals = self.values[self.mesh.elements]  # (E, 3, ncomp)
        return np.einsum("eac,eaj->ecj", vals, self.mesh.grads)


def _coeff_per_element(mesh: TriMesh, coeff, shape: tuple) -> np.ndarray:
    if callable(coeff):
        c = np.asarray(coeff(mesh.centroids), dtype=float)
    else:
        c = np.asarray(coeff, dtype=float)
    if c.ndim == 0:
        c = c * np.eye(shape[0]) if len(shape) == 2 else c
    if c.shape == shape:
        c = np.broadcast_to(c, (mesh.n_elements,) + shape)
    if c.shape != (mesh.n_elements,) + shape:
        raise ValueError(f"coefficient has shape {c.shape}, expected (E,)+{shape}")
    return c


def scalar_element_matrices(mesh: TriMesh, C: np.ndarray) -> np.ndarray:
    return np.einsum("e,eai,eij,ebj->eab", mesh.areas, mesh.grads, C, mesh.grads)


def elastic_element_matrices(mesh: TriMesh, D: np.ndarray) -> np.ndarray:
    Ke = np.einsum("e,eaj,eijkl,ebl->eaibk", mesh.areas, mesh.grads, D, mesh.grads)
    return Ke.reshape(mesh.n_elements, 6, 6)


def _element_dofs(mesh: TriMesh, ncomp: int) -> np.ndarray:
    e = mesh.elements
    if ncomp == 1:
        return e
    return (ncomp * e[:, :, None] + np.arange(ncomp)).reshape(len(e), -1)


def _scatter_matrix(mesh: TriMesh, Ke: np.ndarray, ncomp: int) -> sp.csr_matrix:
    dofs = _element_dofs(mesh, ncomp)
    m = dofs.shape[1]
    rows = np.repeat(dofs, m, axis=1).ravel()
    cols = np.tile(dofs, (1, m)).ravel()
    n = ncomp * mesh.n_nodes
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def scatter_vector(mesh: TriMesh, Fe: np.ndarray, ncomp: int) -> np.ndarray:
    dofs = _element_dofs(mesh, ncomp)
    out = np.zeros(ncomp * mesh.n_nodes)
    np.add.at(out, dofs.ravel(), Fe.reshape(len(dofs), -1).ravel())
    return out


def check_elliptic(C: np.ndarray, what: str = "coefficient"):
    lam = np.linalg.eigvalsh(0.5 * (C + C.swapaxes(-1, -2)))
    if np.any(lam[..., 0] <= 0):
        bad = int(np.argmin(lam[..., 0]))
        raise ValueError(f"{what} is not elliptic at element {bad}: min eigenvalue {lam[bad, 0]:.3g}")


def assemble_scalar(mesh: TriMesh, coeff) -> SparseSystem:
    """Stiffness ``K_AB = sum_e int_e grad(phi_A) . C . grad(phi_B)``."""
    C = _coeff_per_element(mesh, coeff, (2, 2))
    check_elliptic(C)
    K = _scatter_matrix(mesh, scalar_element_matrices(mesh, C), 1)
    return SparseSystem(K, np.zeros(mesh.n_nodes), ncomp=1)


def assemble_elasticity(mesh: TriMesh, elast) -> SparseSystem:
    D = _coeff_per_element(mesh, elast, (2, 2, 2, 2))
    K = _scatter_matrix(mesh, elastic_element_matrices(mesh, D), 2)
    return SparseSystem(K, np.zeros(2 * mesh.n_nodes), ncomp=2)


def element_load(mesh: TriMesh, s: np.ndarray) -> np.ndarray:
    """``int phi_a s`` for element-constant ``s`` of shape ``(E,)`` or ``(E, n)``."""
    s = np.asarray(s, dtype=float)
    ncomp = 1 if s.ndim == 1 else s.shape[1]
    Fe = (mesh.areas / 3.0)[:, None, None] * s.reshape(len(s), 1, ncomp) * np.ones((1, 3, 1))
    return scatter_vector(mesh, Fe, ncomp)


def divergence_load(mesh: TriMesh, q: np.ndarray) -> np.ndarray:
    """``int q . grad(phi_a)`` for element-constant vectors ``(E, 2)`` or
    tensors ``(E, n, 2)`` (row ``i`` pairs with test component ``i``)."""
    q = np.asarray(q, dtype=float)
    if q.ndim == 2:
        Fe = np.einsum("e,ej,eaj->ea", mesh.areas, q, mesh.grads)
        return scatter_vector(mesh, Fe, 1)
    Fe = np.einsum("e,eij,eaj->eai", mesh.areas, q, mesh.grads)
    return scatter_vector(mesh, Fe, q.shape[1])


def _nodal_values(mesh: TriMesh, f, ncomp: int) -> np.ndarray:
    v = np.asarray(f(mesh.nodes) if callable(f) else f, dtype=float)
    shape = (mesh.n_nodes,) if ncomp == 1 else (mesh.n_nodes, ncomp)
    return np.broadcast_to(v, shape).copy()


def assemble_volume_load(mesh: TriMesh, f, ncomp: int = 1) -> np.ndarray:
    """``int f phi_a`` with the vertex rule; ``f`` is a constant or callable."""
    vals = _nodal_values(mesh, f, ncomp)
    per_vertex = vals[mesh.elements]  # (E, 3[, ncomp])
    if ncomp == 1:
        Fe = (mesh.areas / 3.0)[:, None] * per_vertex
    else:
        Fe = (mesh.areas / 3.0)[:, None, None] * per_vertex
    return scatter_vector(mesh, Fe, ncomp)


def assemble_coupling_load(mesh: TriMesh, tensor_field, scalar_field) -> np.ndarray:
    """``int (A T) : grad(v)`` for an element-constant tensor ``A`` and P1 ``T``."""
    A = _coeff_per_element(mesh, tensor_field, (2, 2))
    if isinstance(scalar_field, FieldSolution):
        T = scalar_field.values[:, 0]
    else:
        T = np.asarray(scalar_field, dtype=float).reshape(-1)
    Tm = T[mesh.elements].mean(axis=1)
    return divergence_load(mesh, A * Tm[:, None, None])


def assemble_neumann_load(mesh: MacroMesh, tag: str, flux, ncomp: int = 1) -> np.ndarray:
    """``int_{Gamma_tag} flux phi_a`` with the two-point vertex rule per edge."""
    if not mesh.faces_with_tag(tag):
        raise ValueError(f"no boundary face carries tag {tag!r}")
    edges = mesh.edges_with_tag(tag)
    p = mesh.nodes
    length = np.linalg.norm(p[edges[:, 1]] - p[edges[:, 0]], axis=1)
    vals = _nodal_values(mesh, flux, ncomp)
    out = np.zeros(ncomp * mesh.n_nodes)
    for end in (0, 1):
        nodes = edges[:, end]
        contrib = 0.5 * length[:, None] * vals[nodes].reshape(len(nodes), ncomp)
        dofs = ncomp * nodes[:, None] + np.arange(ncomp)
        np.add.at(out, dofs.ravel(), contrib.ravel())
    return out


def dirichlet_constraints(mesh: MacroMesh, tag: str, value, ncomp: int = 1) -> dict[int, float]:
    """Constraint map ``dof -> value`` for all nodes on faces tagged ``tag``."""
    nodes = mesh.nodes_with_tag(tag)
    v = np.asarray(value(mesh.nodes[nodes]) if callable(value) else value, dtype=float)
    if ncomp == 1 and v.ndim == 1:
        v = v[:, None]
    vals = np.broadcast_to(v, (len(nodes), ncomp))
    dofs = (ncomp * nodes[:, None] + np.arange(ncomp)).ravel()
    return dict(zip(dofs.tolist(), np.asarray(vals).ravel().tolist()))


def apply_dirichlet(system: SparseSystem, constraints: Mapping[int, float] | None = None) -> ConstrainedSystem:
    """Symmetric elimination of constrained rows and columns."""
    cons = dict(system.constraints)
    if constraints:
        cons.update(constraints)
    n = system.ndof
    fixed = np.array(sorted(cons), dtype=np.int64)
    vals = np.array([cons[d] for d in fixed], dtype=float)
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.flatnonzero(mask)
    A = system.matrix.tocsr()
    A_ff = A[free][:, free].tocsc()
    rhs = system.rhs[free].copy()
    if len(fixed):
        rhs -= A[free][:, fixed] @ vals
    return ConstrainedSystem(A_ff, rhs, free, fixed, vals, n)


class Factorization:
    """Sparse LU of a reduced SPD matrix, reusable over many right-hand sides."""

    def __init__(self, matrix: sp.spmatrix):
        self.matrix = sp.csc_matrix(matrix)
        if self.matrix.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc

    def solve(self, rhs: np.ndarray, rtol: float = SOLVER_RTOL) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self._lu is None:
            return np.zeros_like(rhs)
        x = self._lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("solve produced non-finite values (singular system?)")
        r = rhs - self.matrix @ x
        bn = np.linalg.norm(rhs, axis=0)
        rn = np.linalg.norm(r, axis=0)
        scale = np.where(bn > 0, bn, 1.0)
        rel = rn / scale
        if np.any(rel > rtol):
            raise SolverError(f"relative residual {np.max(rel):.3e} exceeds {rtol:g}")
        return x


def solve_spd(system: ConstrainedSystem | SparseSystem) -> np.ndarray:
    """Solve to ``||Ax - b|| / ||b|| <= 1e-10``; returns the full dof vector."""
    if isinstance(system, SparseSystem):
        if system.constraints:
            system = apply_dirichlet(system)
        else:
            return Factorization(system.matrix).solve(system.rhs)
    x = Factorization(system.matrix).solve(system.rhs)
    return system.expand(x)


def recover_gradient(solution: FieldSolution) -> np.ndarray:
    """Area-weighted nodal average of element gradients, ``(N, ncomp, 2)``.

    Boundary nodes average over their (one-sided) adjacent elements.
    """
    mesh = solution.mesh
    g = solution.element_gradients() * mesh.areas[:, None, None]
    n2e = mesh.node_to_element
    wsum = n2e @ mesh.areas
    out = (n2e @ g.reshape(mesh.n_elements, -1)) / wsum[:, None]
    return out.reshape(mesh.n_nodes, solution.ncomp, 2)


def recover_hessian(solution: FieldSolution) -> np.ndarray:
    """Recovered gradient of the recovered gradient, symmetrized: ``(N, ncomp, 2, 2)``."""
    grad = solution.gradient if solution.gradient is not None else recover_gradient(solution)
    N, nc, _ = grad.shape
    g = FieldSolution(solution.mesh, grad.reshape(N, nc * 2))
    H = recover_gradient(g).reshape(N, nc, 2, 2)
    return 0.5 * (H + H.swapaxes(-1, -2))


def with_derivatives(solution: FieldSolution) -> FieldSolution:
    grad = recover_gradient(solution)
    sol = FieldSolution(solution.mesh, solution.values, gradient=grad)
    sol.hessian = recover_hessian(sol)
    return sol
