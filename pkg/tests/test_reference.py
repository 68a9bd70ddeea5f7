import numpy as np
import pytest
from dataclasses import replace

from homsfem.coefficients import MaterialModel, Phase, product_composite
from homsfem.fem import assemble_scalar
from homsfem.homogenize import ConstantField
from homsfem.macro import BoundaryData, Sources, solve_homogenized
from homsfem.mesh import Circle, build_fine_mesh
from homsfem.metrics import error_norm
from homsfem.reference import fine_tensors, solve_reference

INC = Circle((0.5, 0.5), 0.25)
UNIT = ((0.0, 0.0), (1.0, 1.0))
SRC = Sources(h=500.0, m=500.0, f=(1000.0, 1000.0))
BCS = BoundaryData(T=0.0)


def test_constant_material_matches_homogenized_solve():
    p = Phase(3.0, 0.3, 7.0, 2.0, 0.4, 0.2)
    model = MaterialModel("product", p, p, geometry=INC)
    fm = build_fine_mesh(UNIT, 0.25, 4, INC)
    ref = solve_reference(fm, model, 0.25, SRC, BCS)
    b = model.bundle(np.zeros((1, 2)), np.zeros(1, int))
    hom = ConstantField({"k": b.k[0], "g": b.g[0], "D": b.D[0], "A": b.Dalpha[0], "B": b.Dbeta[0]})
    mac = solve_homogenized(fm, hom, SRC, BCS)
    for f in ("T", "c", "u"):
        assert np.allclose(getattr(ref, f).values, getattr(mac, f).values, rtol=1e-10, atol=1e-12)


def test_zero_expansion_decouples():
    m = product_composite("constant", INC)
    m = replace(m, matrix=replace(m.matrix, alpha=0.0, beta=0.0),
                inclusion_phase=replace(m.inclusion_phase, alpha=0.0, beta=0.0))
    fm = build_fine_mesh(UNIT, 0.25, 4, INC)
    a = solve_reference(fm, m, 0.25, SRC, BCS)
    b = solve_reference(fm, m, 0.25, Sources(f=SRC.f), BoundaryData(T=300.0, c=1.0))
    assert np.allclose(a.u.values, b.u.values, atol=1e-12)


def test_energy_equals_load_work(product_model):
    fm = build_fine_mesh(UNIT, 0.25, 8, INC)
    ref = solve_reference(fm, product_model, 0.25, SRC, BCS)
    K = assemble_scalar(fm, fine_tensors(fm, product_model)["k"]).matrix
    T = ref.T.dofs
    energy = T @ (K @ T)
    work = np.sum(fm.areas[:, None] / 3.0 * 500.0 * T[fm.elements])
    assert np.isclose(energy, work, rtol=1e-8)


def _h1_of_T(model, eps, per_cell):
    fm = build_fine_mesh(UNIT, eps, per_cell, INC)
    return error_norm(fm, solve_reference(fm, model, eps, SRC, BCS).T.values, "H1")


def test_reference_resolution_sanity_8_to_16(product_model):
    # staircased inclusion area differs by ~8% between 8 and 16 divisions
    a, b = _h1_of_T(product_model, 0.1, 8), _h1_of_T(product_model, 0.1, 16)
    assert abs(b - a) / b <= 0.05


def test_reference_resolution_sanity_16_to_32(product_model):
    a, b = _h1_of_T(product_model, 0.1, 16), _h1_of_T(product_model, 0.1, 32)
    assert abs(b - a) / b <= 0.05


def test_eps_mismatch_rejected(product_model):
    fm = build_fine_mesh(UNIT, 0.25, 4, INC)
    with pytest.raises(ValueError):
        solve_reference(fm, product_model, 0.5, SRC, BCS)
