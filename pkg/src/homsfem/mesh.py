"""Structured P1 triangulations of the unit cell, the macro domain and the
fine multiscale domain.

All meshes are built on a tensor grid of squares, each square split into two
triangles. Node ``(i, j)`` of an ``nx`` by ``ny`` grid has index
``j * (nx + 1) + i``; squares are enumerated row by row and contribute two
consecutive elements.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

MATRIX = 0
INCLUSION = 1

FACES = ("left", "right", "bottom", "top")

# Dirichlet / Neumann tag pairs, one pair per physical field.
FIELD_TAGS = {"T": ("T", "q"), "c": ("c", "d"), "u": ("u", "sigma")}
ALL_TAGS = frozenset(t for pair in FIELD_TAGS.values() for t in pair)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def contains(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        d2 = (y[:, 0] - self.center[0]) ** 2 + (y[:, 1] - self.center[1]) ** 2
        return d2 < self.radius**2

    def inside_unit_cell(self) -> bool:
        cx, cy = self.center
        r = self.radius
        return r > 0 and cx - r > 0 and cx + r < 1 and cy - r > 0 and cy + r < 1

    @property
    def centered(self) -> bool:
        return bool(np.allclose(self.center, (0.5, 0.5)))


def micro_tags(points: np.ndarray, inclusion: Circle | None) -> np.ndarray:
    """Material tag of micro points ``y`` in ``[0, 1]^2``."""
    points = np.atleast_2d(points)
    tags = np.full(len(points), MATRIX, dtype=np.int8)
    if inclusion is not None:
        tags[inclusion.contains(points)] = INCLUSION
    return tags


@dataclass(frozen=True, eq=False)
class TriMesh:
    nodes: np.ndarray
    elements: np.ndarray
    tags: np.ndarray
    lo: tuple[float, float]
    hi: tuple[float, float]
    shape: tuple[int, int]
    flips: np.ndarray  # per square: False = '/' diagonal, True = '\' diagonal

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def spacing(self) -> tuple[float, float]:
        nx, ny = self.shape
        return ((self.hi[0] - self.lo[0]) / nx, (self.hi[1] - self.lo[1]) / ny)

    @cached_property
    def geometry(self) -> tuple[np.ndarray, np.ndarray]:
        """Element areas ``(E,)`` and P1 shape-function gradients ``(E, 3, 2)``."""
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        # rows of inv(J)^T give gradients of the barycentric coordinates 1 and 2
        g1 = np.stack([d2[:, 1], -d2[:, 0]], axis=1) / det[:, None]
        g2 = np.stack([-d1[:, 1], d1[:, 0]], axis=1) / det[:, None]
        grads = np.stack([-g1 - g2, g1, g2], axis=1)
        return 0.5 * det, grads

    @property
    def areas(self) -> np.ndarray:
        return self.geometry[0]

    @property
    def grads(self) -> np.ndarray:
        return self.geometry[1]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def node_to_element(self) -> sp.csr_matrix:
        ne = self.n_elements
        rows = self.elements.ravel()
        cols = np.repeat(np.arange(ne), 3)
        return sp.csr_matrix(
            (np.ones(3 * ne), (rows, cols)), shape=(self.n_nodes, ne)
        )

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        tol = 1e-12 * max(1.0, *np.abs(self.hi))
        on = (
            (np.abs(x - self.lo[0]) < tol)
            | (np.abs(x - self.hi[0]) < tol)
            | (np.abs(y - self.lo[1]) < tol)
            | (np.abs(y - self.hi[1]) < tol)
        )
        return np.flatnonzero(on)

    @cached_property
    def face_edges(self) -> dict[str, np.ndarray]:
        """Boundary edges ``(B, 2)`` of each box face, ordered along the face."""
        nx, ny = self.shape
        idx = np.arange(self.n_nodes).reshape(ny + 1, nx + 1)
        lines = {
            "bottom": idx[0, :],
            "top": idx[-1, :],
            "left": idx[:, 0],
            "right": idx[:, -1],
        }
        return {f: np.stack([v[:-1], v[1:]], axis=1) for f, v in lines.items()}

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique edges ``(M, 2)`` and the number of elements sharing each."""
        e = self.elements
        all_edges = np.concatenate([e[:, [0, 1]], e[:, [1, 2]], e[:, [2, 0]]])
        all_edges.sort(axis=1)
        uniq, counts = np.unique(all_edges, axis=0, return_counts=True)
        return uniq, counts

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element index and barycentric coordinates of each point.

        Points outside the box are clamped onto it.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        nx, ny = self.shape
        hx, hy = self.spacing
        s = (points[:, 0] - self.lo[0]) / hx
        t = (points[:, 1] - self.lo[1]) / hy
        s = np.clip(s, 0.0, nx)
        t = np.clip(t, 0.0, ny)
        i = np.minimum(np.floor(s).astype(np.int64), nx - 1)
        j = np.minimum(np.floor(t).astype(np.int64), ny - 1)
        ls, lt = s - i, t - j
        sq = j * nx + i
        flip = self.flips[sq]
        second = np.where(flip, ls + lt > 1.0, lt > ls)
        elem = 2 * sq + second.astype(np.int64)
        p0 = self.nodes[self.elements[elem, 0]]
        grads = self.grads[elem]
        lam12 = np.einsum("nij,nj->ni", grads[:, 1:, :], points - p0)
        lam12 = np.clip(lam12, 0.0, 1.0)
        bary = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
        return elem, bary

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """P1 interpolation of nodal ``values`` (leading axis = nodes) at points."""
        elem, bary = self.locate(points)
        vals = values[self.elements[elem]]
        return np.einsum("nk,nk...->n...", bary, vals)


@dataclass(frozen=True, eq=False)
class UnitCellMesh(TriMesh):
    inclusion: Circle | None = None
    symmetry_flag: bool = False


@dataclass(frozen=True, eq=False)
class MacroMesh(TriMesh):
    face_tags: Mapping[str, frozenset] = field(default_factory=dict)
    epsilon: float | None = None

    def faces_with_tag(self, tag: str) -> list[str]:
        return [f for f in FACES if tag in self.face_tags.get(f, ())]

    def edges_with_tag(self, tag: str) -> np.ndarray:
        faces = self.faces_with_tag(tag)
        if not faces:
            return np.zeros((0, 2), dtype=np.int64)
        return np.concatenate([self.face_edges[f] for f in faces])

    def nodes_with_tag(self, tag: str) -> np.ndarray:
        return np.unique(self.edges_with_tag(tag))

    @property
    def boundary_faces(self) -> list[tuple[np.ndarray, frozenset]]:
        return [(self.face_edges[f], self.face_tags[f]) for f in FACES]


def _flips(nx: int, ny: int, pattern: str, block: int | None = None) -> np.ndarray:
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    if pattern == "uniform":
        return np.zeros(nx * ny, dtype=bool)
    if pattern != "symmetric":
        raise MeshError(f"unknown triangulation pattern {pattern!r}")
    bx = block or nx
    by = block or ny
    li, lj = i % bx, j % by
    return (li < bx / 2) != (lj < by / 2)


def _grid(lo, hi, nx: int, ny: int, flips: np.ndarray):
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    jj, ii = np.divmod(np.arange(nx * ny), nx)
    a = jj * (nx + 1) + ii
    b = a + 1
    d = a + nx + 1
    c = d + 1
    first = np.where(flips[:, None], np.stack([a, b, d], 1), np.stack([a, b, c], 1))
    second = np.where(flips[:, None], np.stack([b, c, d], 1), np.stack([a, c, d], 1))
    elements = np.stack([first, second], axis=1).reshape(-1, 3)
    return nodes, elements.astype(np.int64)


def build_unit_cell_mesh(
    n_div: int, inclusion: Circle | None = None, pattern: str = "symmetric"
) -> UnitCellMesh:
    """Structured mesh of ``Y = [0, 1]^2`` with ``n_div`` squares per side.

    Elements are tagged ``INCLUSION`` when their centroid lies inside the circle.
    """
    if int(n_div) != n_div or n_div < 1:
        raise MeshError(f"n_div must be a positive integer, got {n_div!r}")
    n_div = int(n_div)
    if inclusion is not None and not inclusion.inside_unit_cell():
        raise MeshError(f"inclusion {inclusion} is not contained in the unit cell")
    flips = _flips(n_div, n_div, pattern)
    nodes, elements = _grid((0.0, 0.0), (1.0, 1.0), n_div, n_div, flips)
    centroids = nodes[elements].mean(axis=1)
    tags = micro_tags(centroids, inclusion)
    symmetric = inclusion is None or inclusion.centered
    return UnitCellMesh(
        nodes=nodes,
        elements=elements,
        tags=tags,
        lo=(0.0, 0.0),
        hi=(1.0, 1.0),
        shape=(n_div, n_div),
        flips=flips,
        inclusion=inclusion,
        symmetry_flag=symmetric,
    )


def normalize_tagging(tagging: Mapping[str, object] | str | None) -> dict[str, frozenset]:
    """Turn a face -> tag(s) mapping into face -> frozenset of tags.

    A single string applies to all faces. Every face needs at least one tag,
    and per field (T/q, c/d, u/sigma) a face carries at most one of the pair.
    Fields mentioned anywhere must be tagged on every face, so that each
    field's Dirichlet and Neumann parts partition the boundary.
    """
    if tagging is None:
        tagging = {f: ("T", "c", "u") for f in FACES}
    elif isinstance(tagging, str):
        tagging = {f: tagging for f in FACES}
    out: dict[str, frozenset] = {}
    for face in FACES:
        if face not in tagging:
            raise MeshError(f"face {face!r} has no boundary tag")
        raw = tagging[face]
        tags = frozenset([raw] if isinstance(raw, str) else raw)
        if not tags:
            raise MeshError(f"face {face!r} has no boundary tag")
        unknown = tags - ALL_TAGS
        if unknown:
            raise MeshError(f"unknown boundary tags {sorted(unknown)} on face {face!r}")
        out[face] = tags
    extra = set(tagging) - set(FACES)
    if extra:
        raise MeshError(f"unknown faces in boundary tagging: {sorted(extra)}")
    for fld, pair in FIELD_TAGS.items():
        used = [f for f in FACES if out[f] & set(pair)]
        if not used:
            continue
        for f in FACES:
            n = len(out[f] & set(pair))
            if n == 0:
                raise MeshError(f"face {f!r} has no tag for field {fld!r} (one of {pair})")
            if n > 1:
                raise MeshError(f"face {f!r} carries both tags {pair} of field {fld!r}")
    return out


def _check_box(lo, hi):
    lo = tuple(float(v) for v in lo)
    hi = tuple(float(v) for v in hi)
    if len(lo) != 2 or len(hi) != 2:
        raise MeshError("only 2D boxes are supported")
    if not (hi[0] > lo[0] and hi[1] > lo[1]):
        raise MeshError(f"degenerate box {lo} -> {hi}")
    return lo, hi


def build_macro_mesh(
    domain: tuple[Sequence[float], Sequence[float]] = ((0.0, 0.0), (1.0, 1.0)),
    n_div: int | Sequence[int] = 10,
    boundary_tagging: Mapping[str, object] | str | None = None,
    pattern: str = "uniform",
) -> MacroMesh:
    """Structured triangulation of an axis-aligned box with tagged faces."""
    lo, hi = _check_box(*domain)
    nx, ny = (n_div, n_div) if np.isscalar(n_div) else tuple(n_div)
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"n_div must be positive integers, got {n_div!r}")
    nx, ny = int(nx), int(ny)
    tags = normalize_tagging(boundary_tagging)
    flips = _flips(nx, ny, pattern)
    nodes, elements = _grid(lo, hi, nx, ny, flips)
    return MacroMesh(
        nodes=nodes,
        elements=elements,
        tags=np.zeros(len(elements), dtype=np.int8),
        lo=lo,
        hi=hi,
        shape=(nx, ny),
        flips=flips,
        face_tags=tags,
    )


def cells_per_axis(lo, hi, epsilon: float) -> tuple[int, int]:
    counts = []
    for a, b in zip(lo, hi):
        r = (b - a) / epsilon
        n = int(round(r))
        if n < 1 or abs(r - n) > 1e-8 * max(1.0, r):
            raise MeshError(
                f"domain length {b - a} is not an integer number of cells of size {epsilon}"
            )
        counts.append(n)
    return counts[0], counts[1]


def micro_coordinates(x: np.ndarray, epsilon: float, origin=(0.0, 0.0)) -> np.ndarray:
    """``y = (x - origin) / epsilon mod 1``, computed to be robust at cell faces."""
    r = (np.atleast_2d(x) - np.asarray(origin)) / epsilon
    y = r - np.floor(r)
    near = np.abs(r - np.round(r)) < 1e-9
    return np.where(near, 0.0, y)


def build_fine_mesh(
    domain: tuple[Sequence[float], Sequence[float]],
    epsilon: float,
    per_cell_div: int,
    inclusion: Circle | None = None,
    boundary_tagging: Mapping[str, object] | str | None = None,
    pattern: str = "symmetric",
) -> MacroMesh:
    """Material-resolving mesh with ``per_cell_div`` squares per cell and axis.

    The per-cell triangulation pattern is the one ``build_unit_cell_mesh`` uses
    with the same division, so element tags coincide with the cell mesh tags.
    """
    lo, hi = _check_box(*domain)
    if epsilon <= 0:
        raise MeshError("epsilon must be positive")
    if int(per_cell_div) != per_cell_div or per_cell_div < 4:
        raise MeshError(f"per_cell_div must be an integer >= 4, got {per_cell_div!r}")
    per_cell_div = int(per_cell_div)
    cx, cy = cells_per_axis(lo, hi, epsilon)
    nx, ny = cx * per_cell_div, cy * per_cell_div
    tags = normalize_tagging(boundary_tagging)
    flips = _flips(nx, ny, pattern, block=per_cell_div)
    nodes, elements = _grid(lo, hi, nx, ny, flips)
    centroids = nodes[elements].mean(axis=1)
    y = micro_coordinates(centroids, epsilon, lo)
    return MacroMesh(
        nodes=nodes,
        elements=elements,
        tags=micro_tags(y, inclusion),
        lo=lo,
        hi=hi,
        shape=(nx, ny),
        flips=flips,
        face_tags=tags,
        epsilon=float(epsilon),
    )
