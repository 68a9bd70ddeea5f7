import numpy as np
import pytest
from dataclasses import replace

from homsfem.cells import (
    FIRST_FAMILIES,
    SECOND_FAMILIES,
    SEPARATED_FAMILIES,
    VECTOR_FAMILIES,
    CellOperators,
    MissingStencilError,
    PointwiseCells,
    Stencil,
    cell_state,
    solve_first_order,
    solve_first_order_separated,
    solve_grid,
    solve_second_order,
    solve_second_order_separated,
    solve_separated,
    weak_load,
)
from homsfem.coefficients import MaterialModel, Phase, WeightFunction, product_composite
from homsfem.homogenize import build_representative_grid
from homsfem.mesh import build_unit_cell_mesh

from conftest import INC

SMOOTH = "2 + x1*x2"


def constant_model():
    p = Phase(3.0, 0.3, 7.0, 2.0, 0.4, 0.2)
    return MaterialModel("product", p, p, geometry=INC)


def boundary_values(mesh, name, arr):
    b = mesh.boundary_nodes
    return arr[..., b, :] if name in VECTOR_FAMILIES else arr[..., b]


def test_constant_coefficients_give_zero_first_order(cell_mesh):
    s = solve_first_order(cell_mesh, constant_model(), (0.3, 0.6))
    for name in FIRST_FAMILIES:
        assert np.abs(s[name]).max() <= 1e-10, name


def test_constant_coefficients_give_zero_second_order(cell_mesh):
    model = constant_model()
    grid = build_representative_grid(((0, 0), (1, 1)), 3)
    sets = solve_grid(cell_mesh, model, grid)
    for name in FIRST_FAMILIES + SECOND_FAMILIES:
        assert np.abs(sets.families[name]).max() <= 1e-10, name
    sep = solve_separated(cell_mesh, model)
    for name in SEPARATED_FAMILIES:
        assert np.abs(sep.families[name]).max() <= 1e-10, name


def test_all_families_vanish_on_cell_boundary(cell_mesh, product_model):
    grid = build_representative_grid(((0, 0), (1, 1)), 2)
    sets = solve_grid(cell_mesh, product_model, grid)
    for name in FIRST_FAMILIES + SECOND_FAMILIES:
        assert np.all(boundary_values(cell_mesh, name, sets.set_at(0, name)) == 0.0), name


def test_weak_residual_of_first_order_solves(cell_mesh, product_model):
    st = cell_state(cell_mesh, product_model, (0.2, 0.7))
    ops, c = st.ops, st.bundle
    for a in range(2):
        assert ops.residual("k", st.first["H"][a], weak_load(cell_mesh, q=-c.k[:, :, a])) <= 1e-10
        assert ops.residual("g", st.first["L"][a], weak_load(cell_mesh, q=-c.g[:, :, a])) <= 1e-10
    assert ops.residual("D", st.first["M"], weak_load(cell_mesh, q=-c.Dalpha, ncomp=2)) <= 1e-10
    for h in range(2):
        for a in range(2):
            load = weak_load(cell_mesh, q=-c.D[:, :, :, h, a], ncomp=2)
            assert ops.residual("D", st.first["X"][h, a], load) <= 1e-10


def _mirror_index(mesh, axis):
    key = {tuple(np.round(p, 12)): i for i, p in enumerate(mesh.nodes)}
    q = mesh.nodes.copy()
    q[:, axis] = 1 - q[:, axis]
    return np.array([key[tuple(np.round(p, 12))] for p in q])


def test_first_order_reflection_parity(cell_mesh, product_model):
    st = cell_state(cell_mesh, product_model, (0.4, 0.4))
    H, L, X = st.first["H"], st.first["L"], st.first["X"]
    m1, m2 = _mirror_index(cell_mesh, 0), _mirror_index(cell_mesh, 1)
    # H_1 is odd in y1 and even in y2; H_2 the other way round
    assert np.abs(H[0][m1] + H[0]).max() <= 1e-8
    assert np.abs(H[0][m2] - H[0]).max() <= 1e-8
    assert np.abs(H[1][m2] + H[1]).max() <= 1e-8
    assert np.abs(L[0][m1] + L[0]).max() <= 1e-8
    # X^1_{.1}: first component odd, second even under y1 -> 1 - y1
    X11 = X[0, 0]
    assert np.abs(X11[m1, 0] + X11[:, 0]).max() <= 1e-8
    assert np.abs(X11[m1, 1] - X11[:, 1]).max() <= 1e-8
    assert np.abs(H[0]).max() > 1e-3


def test_product_mode_first_order_independent_of_x(cell_mesh, product_model):
    a = solve_first_order(cell_mesh, product_model, (0.1, 0.2))
    b = solve_first_order(cell_mesh, product_model, (0.8, 0.55))
    for name in ("H", "L", "X"):
        assert np.allclose(a[name], b[name], atol=1e-12, rtol=1e-10)


def test_separated_first_order_matches_general(cell_mesh, product_model):
    sep = solve_first_order_separated(cell_mesh, product_model)
    x = np.array([0.35, 0.15])
    gen = solve_first_order(cell_mesh, product_model, x)
    w = product_model.psi(x[None])[0]
    for name in ("H", "L", "X"):
        assert np.abs(sep[name] - gen[name]).max() <= 1e-8 * max(1, np.abs(gen[name]).max())
    assert np.abs(w * sep["M"] - gen["M"]).max() <= 1e-8 * np.abs(gen["M"]).max()
    assert np.abs(w * sep["N"] - gen["N"]).max() <= 1e-8 * np.abs(gen["N"]).max()


def test_separated_N_equals_M_when_beta_equals_alpha(cell_mesh):
    m = product_composite(geometry=INC)
    m = replace(m, matrix=replace(m.matrix, beta=m.matrix.alpha),
                inclusion_phase=replace(m.inclusion_phase, beta=m.inclusion_phase.alpha))
    s = solve_first_order_separated(cell_mesh, m)
    assert np.array_equal(s["N"], s["M"])


def test_general_second_order_matches_separated_combination(cell_mesh):
    model = product_composite(SMOOTH, INC)
    x = np.array([0.3, 0.6])
    fam = PointwiseCells(cell_mesh, model, delta=1e-4).fields_at(x)
    sep = solve_separated(cell_mesh, model).families
    w = 2 + x[0] * x[1]
    gw = np.array([x[1], x[0]])
    R = np.einsum("b,nab->na", gw / w, sep["Rt"])
    assert np.abs(fam["R"] - R).max() <= 1e-6 * np.abs(R).max()
    Q = np.einsum("b,nhabk->nhak", gw / w, sep["Qt"])
    assert np.abs(fam["Q"] - Q).max() <= 1e-6 * np.abs(Q).max()
    assert np.abs(fam["H2"] - sep["H2"]).max() <= 1e-8 * np.abs(sep["H2"]).max()
    assert np.abs(fam["Z"] - w * sep["Zt"]).max() <= 1e-6 * np.abs(w * sep["Zt"]).max()


def test_constant_weight_makes_R_vanish(cell_mesh):
    model = product_composite("constant", INC)
    fam = PointwiseCells(cell_mesh, model, delta=1e-3).fields_at((0.5, 0.5))
    assert np.abs(fam["R"]).max() <= 1e-10
    assert np.abs(fam["Q"]).max() <= 1e-10
    assert np.abs(fam["H2"]).max() > 1e-4


def test_stencil_errors(cell_mesh, product_model):
    st = cell_state(cell_mesh, product_model, (0.5, 0.5))
    with pytest.raises(MissingStencilError):
        solve_second_order(cell_mesh, product_model, (0.5, 0.5), Stencil(st, [None, None], [None, None], [0.1, 0.1]))
    with pytest.raises(MissingStencilError):
        solve_second_order(cell_mesh, product_model, (0.2, 0.5), Stencil(st, [st, st], [st, st], [0.1, 0.1]))


def test_separated_second_order_rejects_coupled_model(cell_mesh, sum_model):
    with pytest.raises(ValueError):
        solve_second_order_separated(cell_mesh, sum_model)


def test_singular_cell_operator_reported():
    mesh = build_unit_cell_mesh(4)
    p = Phase(1.0, 0.3, 0.0, 1.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        MaterialModel("product", p, p).bundle(np.zeros((1, 2)), mesh.tags)


def test_threaded_grid_matches_serial(cell_mesh, sum_model):
    grid = build_representative_grid(((0, 0), (1, 1)), 2)
    a = solve_grid(cell_mesh, sum_model, grid, threads=1)
    b = solve_grid(cell_mesh, sum_model, grid, threads=3)
    for name in a.families:
        assert np.array_equal(a.families[name], b.families[name])
