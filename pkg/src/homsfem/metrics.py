"""Relative errors, fine-scale residuals and convergence-rate fits."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .coefficients import MaterialModel
from .fem import FieldSolution, assemble_volume_load, divergence_load, dirichlet_constraints
from .macro import BoundaryData, Sources, elastic_system, moisture_system, thermal_system
from .mesh import FIELD_TAGS, MacroMesh
from .reference import fine_tensors

FIELDS = ("T", "c", "u")
NORMS = ("L2", "H1")


def _sq_norms(mesh, values: np.ndarray) -> tuple[float, float]:
    """Squared L2 (vertex rule) and H1-semi (element gradients) norms."""
    v = values.reshape(mesh.n_nodes, -1)
    l2 = float(np.sum(mesh.areas[:, None] / 3.0 * (v[mesh.elements] ** 2).sum(axis=-1)))
    g = np.einsum("eac,eaj->ecj", v[mesh.elements], mesh.grads)
    h1 = float(np.sum(mesh.areas * (g**2).sum(axis=(1, 2))))
    return l2, h1


def error_norm(mesh, values: np.ndarray, norm: str = "L2") -> float:
    l2, h1 = _sq_norms(mesh, values)
    return float(np.sqrt(l2 if norm == "L2" else h1))


def relative_error(approx: FieldSolution, reference: FieldSolution, norm: str = "L2") -> float:
    """``||a - r|| / ||r||`` in L2 or the H1 semi-norm (``"H1"``/``"H1semi"``)."""
    if approx.mesh.n_nodes != reference.mesh.n_nodes:
        raise ValueError("fields live on different meshes")
    if approx.ncomp != reference.ncomp:
        raise ValueError("fields have different component counts")
    norm = "H1" if norm in ("H1", "H1semi") else norm
    if norm not in NORMS:
        raise ValueError(f"unknown norm {norm!r}")
    den = error_norm(reference.mesh, reference.values, norm)
    if den == 0.0:
        raise ZeroDivisionError(f"reference field has zero {norm} norm")
    return error_norm(reference.mesh, approx.values - reference.values, norm) / den


def residual_diagnostic(fine_mesh: MacroMesh, model: MaterialModel, epsilon: float, field: FieldSolution,
                        sources: Sources, which: str = "T", coupling: tuple | None = None) -> float:
    """``||b - A x||`` on the non-Dirichlet dofs of the fine system, over ``||b||``.

    ``coupling=(T, c)`` supplies the eigenstress fields for ``which="u"``.
    """
    if fine_mesh.epsilon is not None and not np.isclose(fine_mesh.epsilon, epsilon):
        raise ValueError("fine mesh does not match epsilon")
    t = fine_tensors(fine_mesh, model)
    if which == "T":
        sys, b = thermal_system(fine_mesh, t["k"], sources)
    elif which == "c":
        sys, b = moisture_system(fine_mesh, t["g"], sources)
    elif which == "u":
        if coupling is None:
            raise ValueError("displacement residual needs (T, c)")
        sys, b = elastic_system(fine_mesh, t["D"], t["A"], t["B"], coupling[0], coupling[1], sources)
    else:
        raise ValueError(f"unknown field {which!r}")
    ncomp = sys.ncomp
    fixed = np.array(sorted(dirichlet_constraints(fine_mesh, FIELD_TAGS[which][0], 0.0, ncomp)), dtype=np.int64)
    mask = np.ones(sys.ndof, dtype=bool)
    mask[fixed] = False
    r = (b - sys.matrix @ field.dofs)[mask]
    bn = np.linalg.norm(b[mask])
    if bn == 0.0:
        raise ZeroDivisionError("load vector vanishes on the free dofs")
    return float(np.linalg.norm(r) / bn)


def fit_convergence_rate(pairs) -> float:
    """Least-squares slope of ``log(error)`` against ``log(eps)``."""
    a = np.asarray(pairs, dtype=float)
    if a.ndim != 2 or len(a) < 2:
        raise ValueError("need at least two (eps, error) pairs")
    if np.any(a <= 0):
        raise ValueError("eps and errors must be positive")
    return float(np.polyfit(np.log(a[:, 0]), np.log(a[:, 1]), 1)[0])


def column_names() -> list[str]:
    return [f"{f}error{n}{o}" for f in FIELDS for n in NORMS for o in range(3)]


@dataclass
class ErrorReport:
    """Errors per field, norm and order (0 homogenized, 1 LOMS, 2 HOMS)."""

    errors: dict[str, float] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    sizes: dict[str, int] = field(default_factory=dict)
    label: str = ""

    @classmethod
    def from_fields(cls, approximations: dict, reference, label: str = "") -> "ErrorReport":
        """``approximations[order]`` is a solution with ``.T``, ``.c``, ``.u``."""
        errs = {}
        for o, sol in approximations.items():
            for f in FIELDS:
                for n in NORMS:
                    errs[f"{f}error{n}{o}"] = relative_error(getattr(sol, f), getattr(reference, f), n)
        return cls(errs, label=label)

    def __getitem__(self, key: str) -> float:
        return self.errors[key]

    def row(self) -> dict:
        out = {"label": self.label}
        out.update({c: self.errors.get(c, float("nan")) for c in column_names()})
        out.update({f"n_{k}": v for k, v in self.sizes.items()})
        return out

    def write_csv(self, path, extra_rows: list["ErrorReport"] = ()) -> None:
        rows = [self.row()] + [r.row() for r in extra_rows]
        keys = list(rows[0])
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys)
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{v:.10e}" if isinstance(v, float) else v) for k, v in r.items()})
