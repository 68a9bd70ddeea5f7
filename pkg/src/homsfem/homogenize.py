"""Homogenized tensors from first-order cell functions, the representative
point grid, and multilinear interpolation in the macro coordinate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .coefficients import CoefficientBundle, tensor4_symmetry_defect, voigt
from .mesh import TriMesh

TENSORS = ("k", "g", "D", "A", "B")


def nodal_grad(mesh: TriMesh, f: np.ndarray) -> np.ndarray:
    """Element gradients of nodal P1 fields.

    ``f`` has nodes on axis ``-1`` (scalar) or ``-2`` (vector, components last).
    Returns ``(..., E, 2)`` for scalars and ``(..., E, n, 2)`` for vectors.
    """
    G = mesh.grads
    if f.shape[-1] == mesh.n_nodes:
        return np.einsum("...ea,eaj->...ej", f[..., mesh.elements], G)
    return np.einsum("...eak,eaj->...ekj", f[..., mesh.elements, :], G)


def element_mean(mesh: TriMesh, f: np.ndarray) -> np.ndarray:
    """Element averages of nodal fields (same axis convention as ``nodal_grad``)."""
    if f.shape[-1] == mesh.n_nodes:
        return f[..., mesh.elements].mean(axis=-1)
    return f[..., mesh.elements, :].mean(axis=-2)


def homogenized_from_fields(mesh: TriMesh, c: CoefficientBundle, first: Mapping[str, np.ndarray]) -> dict:
    """Cell averages of coefficient plus corrector flux, centroid quadrature."""
    w = mesh.areas / mesh.areas.sum()
    gH = nodal_grad(mesh, first["H"])  # (2, E, 2): [j, e, k] = dH_j/dy_k
    gL = nodal_grad(mesh, first["L"])
    gX = nodal_grad(mesh, first["X"])  # (h, a, E, m, n) = dX_{mh}^{a}/dy_n
    gM = nodal_grad(mesh, first["M"])  # (E, k, l)
    gN = nodal_grad(mesh, first["N"])
    k_hat = np.einsum("e,eij->ij", w, c.k) + np.einsum("e,eik,jek->ij", w, c.k, gH)
    g_hat = np.einsum("e,eij->ij", w, c.g) + np.einsum("e,eik,jek->ij", w, c.g, gL)
    D_hat = np.einsum("e,eijkl->ijkl", w, c.D) + np.einsum("e,eijmn,klemn->ijkl", w, c.D, gX)
    A_hat = np.einsum("e,eij->ij", w, c.Dalpha) + np.einsum("e,eijkl,ekl->ij", w, c.D, gM)
    B_hat = np.einsum("e,eij->ij", w, c.Dbeta) + np.einsum("e,eijkl,ekl->ij", w, c.D, gN)
    return {"k": k_hat, "g": g_hat, "D": D_hat, "A": A_hat, "B": B_hat}


def compute_homogenized(cell_mesh: TriMesh, model, x_I, first_order) -> dict:
    """Homogenized ``k^, g^, D^, A^, B^`` at ``x_I`` from a first-order cell set."""
    x_I = np.asarray(x_I, dtype=float)
    if first_order.x is not None and not np.allclose(first_order.x, x_I):
        raise ValueError(f"cell set was solved at {first_order.x}, not at {x_I}")
    if first_order.fields["H"].shape[-1] != cell_mesh.n_nodes:
        raise ValueError("cell set does not belong to this cell mesh")
    c = model.bundle(x_I[None, :], cell_mesh.tags)
    return homogenized_from_fields(cell_mesh, c, first_order.fields)


def tensor_report(t: Mapping[str, np.ndarray]) -> dict:
    """Symmetry defects and minimum eigenvalues of one homogenized tensor set."""
    rep = {}
    for name in ("k", "g", "A", "B"):
        m = t[name]
        rep[f"{name}_sym"] = float(np.abs(m - m.T).max())
        rep[f"{name}_min_eig"] = float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())
    rep["D_sym"] = tensor4_symmetry_defect(t["D"])
    V = voigt(t["D"])
    rep["D_min_eig"] = float(np.linalg.eigvalsh(0.5 * (V + V.T)).min())
    return rep


@dataclass(frozen=True)
class RepresentativeGrid:
    """Tensor-product macro sample points, ``x`` index fastest."""

    axes: tuple[np.ndarray, np.ndarray]

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.axes[0]), len(self.axes[1]))

    @property
    def points(self) -> np.ndarray:
        X, Y = np.meshgrid(*self.axes)
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def spacing(self) -> tuple[float, float]:
        return tuple(float(a[1] - a[0]) if len(a) > 1 else 0.0 for a in self.axes)

    def __len__(self) -> int:
        return self.shape[0] * self.shape[1]

    def index(self, i: int, j: int) -> int:
        return j * self.shape[0] + i

    def neighbours(self, p: int, axis: int) -> tuple[int, int, float]:
        """Indices for a central (one-sided at the edges) difference along ``axis``.

        Returns ``(plus, minus, x_plus - x_minus)``; the step is 0 when the grid
        has a single point along ``axis``.
        """
        n = self.shape[axis]
        ij = [p % self.shape[0], p // self.shape[0]]
        k = ij[axis]
        lo, hi = max(k - 1, 0), min(k + 1, n - 1)
        if lo == hi:
            return p, p, 0.0
        a, b = list(ij), list(ij)
        a[axis], b[axis] = hi, lo
        step = float(self.axes[axis][hi] - self.axes[axis][lo])
        return self.index(*a), self.index(*b), step

    def weights(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Multilinear weights: corner indices ``(m, 4)`` and weights ``(m, 4)``.

        Points are clamped to the grid's bounding box.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx, frac = [], []
        for d in range(2):
            ax = self.axes[d]
            if len(ax) == 1:
                idx.append(np.zeros(len(x), dtype=np.int64))
                frac.append(np.zeros(len(x)))
                continue
            xc = np.clip(x[:, d], ax[0], ax[-1])
            i = np.clip(np.searchsorted(ax, xc, side="right") - 1, 0, len(ax) - 2)
            idx.append(i)
            frac.append((xc - ax[i]) / (ax[i + 1] - ax[i]))
        nx = self.shape[0]
        i, j = idx
        tx, ty = frac
        i1 = np.minimum(i + 1, nx - 1)
        j1 = np.minimum(j + 1, self.shape[1] - 1)
        corners = np.stack([j * nx + i, j * nx + i1, j1 * nx + i, j1 * nx + i1], axis=1)
        w = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=1)
        return corners, w


def build_representative_grid(domain, n_rep) -> RepresentativeGrid:
    """Uniform tensor grid including the domain corners; ``n_rep=1`` gives the midpoint."""
    (lo, hi) = domain
    n = (n_rep, n_rep) if np.isscalar(n_rep) else tuple(n_rep)
    axes = []
    for d in range(2):
        if n[d] < 1:
            raise ValueError("n_rep must be >= 1")
        if n[d] == 1:
            axes.append(np.array([0.5 * (lo[d] + hi[d])]))
        else:
            axes.append(np.linspace(lo[d], hi[d], n[d]))
    return RepresentativeGrid(tuple(axes))


@dataclass
class HomogenizedField:
    """Homogenized tensors sampled on a representative grid."""

    grid: RepresentativeGrid
    values: dict[str, np.ndarray]  # name -> (n_points, ...)

    def at(self, x) -> dict[str, np.ndarray]:
        return interpolate_tensor(self, x)


def interpolate_tensor(field: HomogenizedField, x) -> dict[str, np.ndarray]:
    """Multilinear interpolation of every tensor entry, ``(m, ...)`` per name."""
    corners, w = field.grid.weights(x)
    return {
        name: np.einsum("mc,mc...->m...", w, v[corners]) for name, v in field.values.items()
    }


class ScaledField:
    """Homogenized tensors of a scale-separated model: ``omega * star`` and
    ``omega**2 * star`` for the expansion tensors."""

    def __init__(self, omega, star: Mapping[str, np.ndarray]):
        self.omega = omega
        self.star = dict(star)

    def at(self, x) -> dict[str, np.ndarray]:
        w = self.omega(x)
        out = {}
        for name, v in self.star.items():
            p = 2 if name in ("A", "B") else 1
            out[name] = (w**p).reshape((-1,) + (1,) * v.ndim) * v[None]
        return out


def interpolate_cell_function(stacked: Mapping[str, np.ndarray], grid: RepresentativeGrid, x, which: str) -> np.ndarray:
    """Nodal-value-wise multilinear interpolation of one family across the grid.

    ``stacked[which]`` has the grid point on axis 0; returns ``(m, ...)``.
    """
    corners, w = grid.weights(x)
    v = stacked[which]
    return np.einsum("mc,mc...->m...", w, v[corners])


class ConstantField:
    """Spatially constant tensors (single-point homogenized data)."""

    def __init__(self, values: Mapping[str, np.ndarray]):
        self.values = {k: np.asarray(v, dtype=float) for k, v in values.items()}

    def at(self, x) -> dict[str, np.ndarray]:
        m = len(np.atleast_2d(x))
        return {k: np.broadcast_to(v, (m,) + v.shape).copy() for k, v in self.values.items()}


def write_homogenized_csv(path, points: np.ndarray, values: Mapping[str, np.ndarray]) -> None:
    """One row per point; 2-tensors as (11, 22, 12), D in Voigt order."""
    cols = ["x1", "x2"]
    for n in ("k", "g", "A", "B"):
        cols += [f"{n}_11", f"{n}_22", f"{n}_12"]
    cols += [f"D_{a}{b}" for a in range(1, 4) for b in range(1, 4)]
    rows = []
    for p in range(len(points)):
        r = list(points[p])
        for n in ("k", "g", "A", "B"):
            m = values[n][p]
            r += [m[0, 0], m[1, 1], m[0, 1]]
        r += list(voigt(values["D"][p]).ravel())
        rows.append(r)
    np.savetxt(path, np.array(rows), delimiter=",", header=",".join(cols), comments="", fmt="%.12e")
