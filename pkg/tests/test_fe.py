from fractions import Fraction as Fr

import numpy as np
import pytest

from conftest import random_mesh
from idpamr.fe import (
    build_constraints, build_dof_map, constraint_residual, enforce, gauss_lobatto_points, reference_element,
)
from idpamr.mesh import Mark, MeshForest, apply_marks

# exact integrals evaluated symbolically, frozen here
Q1_MASS = np.array([[4, 2, 2, 1], [2, 4, 1, 2], [2, 1, 4, 2], [1, 2, 2, 4]]) / 36.0
Q1_CHILD0 = np.array([
    [Fr(25, 576), Fr(5, 144), Fr(5, 144), Fr(1, 36)],
    [Fr(5, 576), Fr(5, 288), Fr(1, 144), Fr(1, 72)],
    [Fr(5, 576), Fr(1, 144), Fr(5, 288), Fr(1, 72)],
    [Fr(1, 576), Fr(1, 288), Fr(1, 288), Fr(1, 144)],
], dtype=float)
Q2_LUMPED = np.array([1, 4, 1, 4, 16, 4, 1, 4, 1]) / 36.0


def test_gauss_lobatto_points():
    assert np.allclose(gauss_lobatto_points(1), [0.0, 1.0])
    assert np.allclose(gauss_lobatto_points(2), [0.0, 0.5, 1.0])


def test_q1_mass_matches_exact_integrals():
    el = reference_element(1)
    assert np.allclose(el.mass, Q1_MASS, atol=1e-15)
    assert np.allclose(el.lumped, 0.25)


def test_q2_lumped_masses_positive_and_exact():
    el = reference_element(2)
    assert np.allclose(el.lumped, Q2_LUMPED, atol=1e-15)
    assert el.mass[0, 0] == pytest.approx(4 / 225)
    assert el.mass[0, 1] == pytest.approx(2 / 225)


def test_transfer_child0_matches_exact_integrals():
    assert np.allclose(reference_element(1).transfer[0], Q1_CHILD0, atol=1e-15)


def test_transfer_moments(degree):
    el = reference_element(degree)
    T = el.transfer
    # sum over children of the parent-test moments equals the parent lumped mass
    assert np.allclose(T.sum(axis=(0, 2)), el.lumped)
    # every child basis function integrates to a quarter of its reference value
    assert np.allclose(T.sum(axis=1), 0.25 * el.lumped[None, :])


def test_interpolation_reproduces_polynomials(degree):
    el = reference_element(degree)
    f = lambda p: 1.0 + 2.0 * p[:, 0] - p[:, 1] + (p[:, 0] * p[:, 1] if degree == 2 else 0.0)
    parent_vals = f(el.nodes)
    for c in range(4):
        child_nodes = el.child_offset(c) + 0.5 * el.nodes
        assert np.allclose(el.interpolation[c] @ parent_vals, f(child_nodes), atol=1e-14)


def test_b_matrix_annihilates_constants(degree):
    el = reference_element(degree)
    # b = m M^-1 - I maps the moments of a constant (M 1 = m) to zero
    assert np.allclose(el.b_matrix @ el.lumped, 0.0, atol=1e-15)


def test_dofs_shared_only_on_conforming_interfaces():
    mesh = apply_marks(MeshForest.uniform(2, 1), {(0, 0, 0): Mark.REFINE})
    dm = build_dof_map(mesh, 1)
    # 3x3 fine nodes on the left (one of them hanging) plus 2 coarse-only nodes
    assert dm.n_dofs == 9 + 2
    cons = build_constraints(mesh, dm)
    assert len(cons) == 1
    (i, coeffs), = cons.entries.items()
    assert np.allclose(dm.coords[i], [0.5, 0.5])
    assert sorted(coeffs.values()) == [0.5, 0.5]


def test_p2_hanging_coefficients():
    mesh = apply_marks(MeshForest.uniform(2, 1), {(0, 0, 0): Mark.REFINE})
    dm = build_dof_map(mesh, 2)
    cons = build_constraints(mesh, dm)
    at_quarter = [c for i, c in cons.entries.items() if np.isclose(dm.coords[i, 1], 0.25)]
    assert len(at_quarter) == 1
    assert sorted(at_quarter[0].values()) == pytest.approx([-1 / 8, 3 / 8, 3 / 4])


def test_constraints_closed_and_row_sums(rng, degree):
    for _ in range(5):
        mesh = random_mesh(rng, levels=3)
        dm = build_dof_map(mesh, degree)
        cons = build_constraints(mesh, dm)
        assert cons.is_closed()
        if len(cons):
            assert np.max(np.abs(cons.row_sums() - 1.0)) <= 1e-14


def test_polynomial_interpolants_satisfy_constraints(rng, degree):
    mesh = random_mesh(rng, levels=3)
    dm = build_dof_map(mesh, degree)
    cons = build_constraints(mesh, dm)
    x, y = dm.coords.T
    f = 1.0 + x - 2.0 * y + (x * x - x * y if degree == 2 else 0.0)
    assert constraint_residual(cons, f[:, None]) <= 1e-14


def test_enforce_then_residual_zero(rng):
    mesh = random_mesh(rng, levels=3)
    dm = build_dof_map(mesh, 2)
    cons = build_constraints(mesh, dm)
    U = enforce(cons, rng.normal(size=(dm.n_dofs, 3)))
    assert constraint_residual(cons, U) <= 1e-15
    C = cons.condensation
    assert np.allclose(C @ U[cons.free_dofs], U)
