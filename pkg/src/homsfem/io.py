"""VTK export, cell-set cache and content hashing."""

from __future__ import annotations

import contextlib
import hashlib
import io as _io
import json
from pathlib import Path

import meshio
import numpy as np

from .cells import GridCellSets, SeparatedCellSets
from .homogenize import HomogenizedField, RepresentativeGrid


def write_vtk(path, mesh, point_data: dict[str, np.ndarray]) -> Path:
    """Legacy ASCII VTK unstructured grid; 2-vectors are padded to 3D."""
    pts = np.column_stack([mesh.nodes, np.zeros(mesh.n_nodes)])
    data = {}
    for name, v in point_data.items():
        v = np.asarray(v, dtype=float).reshape(mesh.n_nodes, -1)
        if v.shape[1] == 1:
            data[name] = v[:, 0]
        elif v.shape[1] == 2:
            data[name] = np.column_stack([v, np.zeros(len(v))])
        else:
            for k in range(v.shape[1]):
                data[f"{name}_{k}"] = v[:, k]
    m = meshio.Mesh(pts, [("triangle", mesh.elements)], point_data=data,
                    cell_data={"phase": [np.asarray(mesh.tags, dtype=np.int32)]})
    path = Path(path)
    with contextlib.redirect_stderr(_io.StringIO()):  # meshio nags about ASCII output
        meshio.write(path, m, file_format="vtk", binary=False)
    return path


def solution_point_data(sol, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for name, f in sol.fields().items():
        out[prefix + name] = f.values
        if f.gradient is not None:
            out[prefix + "grad_" + name] = f.gradient.reshape(f.mesh.n_nodes, -1)
    return out


def stable_hash(obj) -> str:
    """SHA-256 of a JSON rendering with sorted keys (floats via ``repr``)."""
    text = json.dumps(obj, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_cell_sets(path, sets) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"fam_{k}": v for k, v in sets.families.items()}
    if isinstance(sets, GridCellSets):
        arrays["kind"] = np.array("grid")
        arrays["axis0"], arrays["axis1"] = sets.grid.axes
        arrays.update({f"hom_{k}": v for k, v in sets.homogenized.values.items()})
    else:
        arrays["kind"] = np.array("separated")
        arrays.update({f"hom_{k}": v for k, v in sets.star.items()})
    np.savez(path, **arrays)
    return path


def load_cell_sets(path):
    with np.load(path) as z:
        fams = {k[4:]: z[k] for k in z.files if k.startswith("fam_")}
        hom = {k[4:]: z[k] for k in z.files if k.startswith("hom_")}
        if str(z["kind"]) == "grid":
            grid = RepresentativeGrid((z["axis0"], z["axis1"]))
            return GridCellSets(grid, fams, HomogenizedField(grid, hom))
        return SeparatedCellSets(fams, hom)
