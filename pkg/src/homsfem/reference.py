"""Direct fine-scale solve of the oscillatory problem on a material-resolving mesh."""

from __future__ import annotations

import numpy as np

from .coefficients import MaterialModel
from .macro import BoundaryData, CoupledSolution, Sources, solve_coupled
from .mesh import MacroMesh


def fine_tensors(fine_mesh: MacroMesh, model: MaterialModel) -> dict[str, np.ndarray]:
    """Coefficients ``a(x, x/eps)`` at element centroids; the micro phase comes
    from the mesh tags, which were set from ``centroid/eps mod 1``."""
    b = model.bundle(fine_mesh.centroids, fine_mesh.tags)
    return {"k": b.k, "g": b.g, "D": b.D, "A": b.Dalpha, "B": b.Dbeta}


def solve_reference(fine_mesh: MacroMesh, model: MaterialModel, epsilon: float,
                    sources: Sources, bcs: BoundaryData) -> CoupledSolution:
    if fine_mesh.epsilon is not None and not np.isclose(fine_mesh.epsilon, epsilon):
        raise ValueError(f"fine mesh was built for eps={fine_mesh.epsilon}, not {epsilon}")
    return solve_coupled(fine_mesh, fine_tensors(fine_mesh, model), sources, bcs)
