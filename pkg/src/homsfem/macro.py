"""Coupled thermal, moisture and elastic solves on a triangulated box.

The same one-way coupled driver serves the homogenized macro problem
(tensors interpolated to element centroids) and the fine-scale reference
(oscillatory tensors evaluated at element centroids).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .fem import (
    FieldSolution,
    SparseSystem,
    apply_dirichlet,
    assemble_elasticity,
    assemble_neumann_load,
    assemble_scalar,
    assemble_volume_load,
    divergence_load,
    dirichlet_constraints,
    solve_spd,
    with_derivatives,
)
from .mesh import FIELD_TAGS, MacroMesh

Value = float | tuple | Callable


@dataclass(frozen=True)
class Sources:
    """Heat source ``h``, moisture source ``m`` and body force ``f``."""

    h: Value = 0.0
    m: Value = 0.0
    f: Value = (0.0, 0.0)


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet values (T, c, u) and fluxes/tractions (q, d, sigma)."""

    T: Value = 273.15
    q: Value = 0.0
    c: Value = 0.0
    d: Value = 0.0
    u: Value = (0.0, 0.0)
    sigma: Value = (0.0, 0.0)


@dataclass
class CoupledSolution:
    T: FieldSolution
    c: FieldSolution
    u: FieldSolution
    timings: dict = field(default_factory=dict)

    @property
    def mesh(self) -> MacroMesh:
        return self.T.mesh

    def fields(self) -> dict[str, FieldSolution]:
        return {"T": self.T, "c": self.c, "u": self.u}


MacroSolution = CoupledSolution


def _check_dirichlet(mesh: MacroMesh) -> None:
    for fld, (dtag, _) in FIELD_TAGS.items():
        if not mesh.faces_with_tag(dtag):
            raise ValueError(f"field {fld!r} has no Dirichlet boundary (tag {dtag!r})")


def _solve_field(mesh: MacroMesh, system: SparseSystem, rhs: np.ndarray, bcs: BoundaryData, fld: str) -> FieldSolution:
    dtag, ntag = FIELD_TAGS[fld]
    ncomp = system.ncomp
    if mesh.faces_with_tag(ntag):
        rhs = rhs + assemble_neumann_load(mesh, ntag, getattr(bcs, ntag), ncomp)
    system.rhs = rhs
    cons = dirichlet_constraints(mesh, dtag, getattr(bcs, dtag), ncomp)
    x = solve_spd(apply_dirichlet(system, cons))
    return FieldSolution.from_dofs(mesh, x, ncomp)


def thermal_system(mesh: MacroMesh, k: np.ndarray, sources: Sources) -> tuple[SparseSystem, np.ndarray]:
    return assemble_scalar(mesh, k), assemble_volume_load(mesh, sources.h, 1)


def moisture_system(mesh: MacroMesh, g: np.ndarray, sources: Sources) -> tuple[SparseSystem, np.ndarray]:
    return assemble_scalar(mesh, g), assemble_volume_load(mesh, sources.m, 1)


def elastic_system(mesh: MacroMesh, D, A, B, T: FieldSolution, c: FieldSolution,
                   sources: Sources) -> tuple[SparseSystem, np.ndarray]:
    """Elasticity with eigenstress load ``int (A T + B c) : grad v``."""
    Tm = T.values[mesh.elements, 0].mean(axis=1)
    cm = c.values[mesh.elements, 0].mean(axis=1)
    eig = A * Tm[:, None, None] + B * cm[:, None, None]
    rhs = assemble_volume_load(mesh, sources.f, 2) + divergence_load(mesh, eig)
    return assemble_elasticity(mesh, D), rhs


def solve_coupled(mesh: MacroMesh, tensors: Mapping[str, np.ndarray], sources: Sources,
                  bcs: BoundaryData) -> CoupledSolution:
    """Sequential T, c, u solves with element-wise tensors ``k, g, D, A, B``."""
    _check_dirichlet(mesh)
    sysT, bT = thermal_system(mesh, tensors["k"], sources)
    T = _solve_field(mesh, sysT, bT, bcs, "T")
    sysc, bc = moisture_system(mesh, tensors["g"], sources)
    c = _solve_field(mesh, sysc, bc, bcs, "c")
    sysu, bu = elastic_system(mesh, tensors["D"], tensors["A"], tensors["B"], T, c, sources)
    u = _solve_field(mesh, sysu, bu, bcs, "u")
    return CoupledSolution(T, c, u)


def solve_homogenized(macro_mesh: MacroMesh, homog, sources: Sources, bcs: BoundaryData) -> CoupledSolution:
    """Homogenized problem with tensors from ``homog.at`` at element centroids."""
    t = homog.at(macro_mesh.centroids)
    return solve_coupled(macro_mesh, t, sources, bcs)


def prepare_macro_derivatives(sol: CoupledSolution) -> CoupledSolution:
    """Recovered gradients and Hessians for T, c and each u component."""
    return CoupledSolution(with_derivatives(sol.T), with_derivatives(sol.c), with_derivatives(sol.u), dict(sol.timings))
