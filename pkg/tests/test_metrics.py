import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from homsfem.coefficients import product_composite
from homsfem.fem import FieldSolution
from homsfem.macro import BoundaryData, Sources
from homsfem.mesh import Circle, build_fine_mesh, build_macro_mesh
from homsfem.metrics import (
    ErrorReport,
    column_names,
    error_norm,
    fit_convergence_rate,
    relative_error,
    residual_diagnostic,
)
from homsfem.reference import solve_reference

MESH = build_macro_mesh(n_div=6)
INC = Circle((0.5, 0.5), 0.25)


def field(v):
    return FieldSolution(MESH, v)


def test_identical_fields_zero_error(rng):
    r = field(rng.random(MESH.n_nodes))
    assert relative_error(r, r, "L2") == 0.0 and relative_error(r, r, "H1semi") == 0.0


@given(st.integers(0, 1000))
def test_doubled_field_gives_unit_error(seed):
    v = np.random.default_rng(seed).standard_normal((MESH.n_nodes, 2))
    for n in ("L2", "H1"):
        assert np.isclose(relative_error(field(2 * v), field(v), n), 1.0)


@given(st.integers(0, 1000))
def test_triangle_inequality_of_numerators(seed):
    r = np.random.default_rng(seed)
    a, b = r.standard_normal(MESH.n_nodes), r.standard_normal(MESH.n_nodes)
    for n in ("L2", "H1"):
        assert error_norm(MESH, a + b, n) <= error_norm(MESH, a, n) + error_norm(MESH, b, n) + 1e-12


def test_norms_of_linear_field_agree_across_meshes():
    vals = []
    for n in (4, 16):
        m = build_macro_mesh(n_div=n)
        vals.append(error_norm(m, 1 + m.nodes[:, 0] + 2 * m.nodes[:, 1], "H1"))
    assert np.isclose(vals[0], np.sqrt(5)) and np.isclose(vals[1], np.sqrt(5))


def test_vector_norm_sums_components(rng):
    v = rng.random((MESH.n_nodes, 2))
    assert np.isclose(error_norm(MESH, v) ** 2, error_norm(MESH, v[:, 0]) ** 2 + error_norm(MESH, v[:, 1]) ** 2)


def test_error_guards():
    z = field(np.zeros(MESH.n_nodes))
    with pytest.raises(ZeroDivisionError):
        relative_error(z, z)
    with pytest.raises(ValueError):
        relative_error(field(np.ones((MESH.n_nodes, 2))), field(np.ones(MESH.n_nodes)))
    with pytest.raises(ValueError):
        relative_error(FieldSolution(build_macro_mesh(n_div=3), np.ones(16)), field(np.ones(MESH.n_nodes)))
    with pytest.raises(ValueError):
        relative_error(field(np.ones(MESH.n_nodes)), field(np.ones(MESH.n_nodes)), "Linf")


def test_residual_of_reference_is_tiny_and_homogenized_is_large():
    model = product_composite(geometry=INC)
    fm = build_fine_mesh(((0, 0), (1, 1)), 0.25, 8, INC)
    src = Sources(h=500.0, m=500.0, f=(1000.0, 1000.0))
    ref = solve_reference(fm, model, 0.25, src, BoundaryData(T=0.0))
    assert residual_diagnostic(fm, model, 0.25, ref.T, src, "T") <= 1e-10
    assert residual_diagnostic(fm, model, 0.25, ref.c, src, "c") <= 1e-10
    assert residual_diagnostic(fm, model, 0.25, ref.u, src, "u", coupling=(ref.T, ref.c)) <= 1e-10
    # a smooth surrogate of the solution is far from satisfying the fine system
    smooth = FieldSolution(fm, ref.T.values[:, 0].max() * 16 * np.prod(fm.nodes * (1 - fm.nodes), axis=1))
    assert residual_diagnostic(fm, model, 0.25, smooth, src, "T") > 0.1
    with pytest.raises(ValueError):
        residual_diagnostic(fm, model, 0.25, ref.u, src, "u")


def test_rate_fit():
    e = np.array([1 / 4, 1 / 8, 1 / 16])
    assert np.isclose(fit_convergence_rate(list(zip(e, e))), 1.0)
    assert np.isclose(fit_convergence_rate(list(zip(e, 3 * e**2))), 2.0)
    with pytest.raises(ValueError):
        fit_convergence_rate([(0.1, 0.2)])
    with pytest.raises(ValueError):
        fit_convergence_rate([(0.1, 0.0), (0.2, 0.1)])


def test_report_columns_and_csv(tmp_path, rng):
    names = column_names()
    assert names[:6] == ["TerrorL20", "TerrorL21", "TerrorL22", "TerrorH10", "TerrorH11", "TerrorH12"]
    assert len(names) == 18 and names[-1] == "uerrorH12"

    class Sol:
        def __init__(self, s):
            self.T, self.c = field(s * rng.random(MESH.n_nodes) + 1), field(s * rng.random(MESH.n_nodes) + 1)
            self.u = field(s * rng.random((MESH.n_nodes, 2)) + 1)

    ref = Sol(1.0)
    rep = ErrorReport.from_fields({0: Sol(1.0), 1: Sol(0.5), 2: ref}, ref, label="x")
    assert all(v >= 0 for v in rep.errors.values())
    assert rep["TerrorH12"] == 0.0
    rep.write_csv(tmp_path / "e.csv")
    with open(tmp_path / "e.csv") as fh:
        row = next(csv.DictReader(fh))
    assert list(row)[1:19] == names
