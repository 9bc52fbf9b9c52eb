import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_field, random_marks, random_mesh
from idpamr.adaptivity import (
    Discretization, IndicatorConfig, adaptation_cycle, cell_indicator, extend, mark, smoothness_indicator,
    transfer,
)
from idpamr.fe import constraint_residual
from idpamr.mesh import Mark, MeshForest
from idpamr.systems import ShallowWater


def interior(d):
    (x0, x1), (y0, y1) = d.mesh.extent
    x, y = d.dofmap.coords.T
    return (x > x0 + 1e-12) & (x < x1 - 1e-12) & (y > y0 + 1e-12) & (y < y1 - 1e-12)


def test_config_defaults_and_validation():
    cfg = IndicatorConfig()
    assert cfg.alpha_coarsen == pytest.approx(0.05)
    assert (cfg.kappa, cfg.rounds, cfg.period) == (1.0, 2, 10)
    with pytest.raises(ValueError):
        IndicatorConfig(alpha_ref=0.1, alpha_coarsen=0.2)
    with pytest.raises(ValueError):
        IndicatorConfig(kappa=1.5)


def test_constant_field_gives_zero(rng):
    d = Discretization(random_mesh(rng), 1)
    alpha = smoothness_indicator(d.mass.beta, np.full(d.n_dofs, 3.0), 1.0)
    assert np.all(alpha == 0.0)


def test_linear_field_vanishes_on_uniform_interior():
    d = Discretization(MeshForest.uniform(4, 4), 1)
    x, y = d.dofmap.coords.T
    alpha = smoothness_indicator(d.mass.beta, 2.0 * x - 0.5 * y + 1.0, 0.0)
    assert np.max(alpha[interior(d)]) <= 1e-10


def test_step_field_detected_at_jump():
    d = Discretization(MeshForest.uniform(8, 1, ((0.0, 8.0), (0.0, 1.0))), 1)
    x = d.dofmap.coords[:, 0]
    alpha = smoothness_indicator(d.mass.beta, np.where(x <= 4.0, 1.0, 0.0), 0.0)
    at_jump = np.isclose(x, 4.0) | np.isclose(x, 5.0)
    assert np.allclose(alpha[at_jump], 1.0)
    assert np.all(alpha[np.abs(x - 4.5) > 1.0] == 0.0)


@pytest.mark.parametrize("kappa", [0.0, 0.5, 1.0])
def test_scale_invariance(rng, kappa):
    d = Discretization(random_mesh(rng), 1)
    Q = rng.uniform(size=(d.n_dofs, 2))
    base = smoothness_indicator(d.mass.beta, Q, kappa)
    for c in (1e-3, 1e3):
        assert np.allclose(smoothness_indicator(d.mass.beta, c * Q, kappa), base, rtol=1e-12, atol=1e-14)


def test_indicator_range_and_constrained_zero(rng):
    d = Discretization(random_mesh(rng), 1)
    Q = rng.uniform(size=(d.n_dofs, 2))
    alpha = smoothness_indicator(d.mass.beta, Q, 0.3, d.constraints.constrained)
    assert np.all((alpha >= 0) & (alpha <= 2 + 1e-12))
    assert np.all(alpha[d.constraints.constrained] == 0)


def test_extend_rounds():
    S = sp.csr_matrix(np.array([[1, 1, 0, 0], [1, 1, 1, 0], [0, 1, 1, 1], [0, 0, 1, 1]], float))
    a = np.array([0.0, 0.0, 0.0, 1.0])
    assert np.array_equal(extend(a, S, 0), a)
    assert np.array_equal(extend(a, S, 1), [0, 0, 1, 1])
    assert np.array_equal(extend(a, S, 2), [0, 1, 1, 1])
    assert np.array_equal(extend(extend(a, S, 3), S, 1), extend(a, S, 3))


def test_mark_matches_direct_scan(rng):
    d = Discretization(random_mesh(rng), 1)
    alpha = rng.uniform(size=d.n_dofs) ** 2
    cfg = IndicatorConfig(alpha_ref=0.3, alpha_coarsen=0.1, max_level=3)
    marks = mark(d.dofmap, alpha, cfg)
    for c, key in enumerate(d.dofmap.cells):
        a = sum(alpha[i] for i in d.dofmap.cell_dofs[c]) / d.dofmap.element.nloc
        expect = Mark.REFINE if (a >= 0.3 and key[0] < 3) else Mark.COARSEN if a <= 0.1 else Mark.KEEP
        assert marks[key] is expect


def test_mark_threshold_inclusive():
    d = Discretization(MeshForest.uniform(1, 1), 1)
    cfg = IndicatorConfig(alpha_ref=0.2)
    assert mark(d.dofmap, np.full(d.n_dofs, 0.2), cfg)[(0, 0, 0)] is Mark.REFINE
    zero = IndicatorConfig(alpha_ref=0.2, alpha_coarsen=0.0)
    assert mark(d.dofmap, np.zeros(d.n_dofs), zero)[(0, 0, 0)] is Mark.COARSEN


def test_cell_indicator_average():
    d = Discretization(MeshForest.uniform(2, 1), 1)
    alpha = np.arange(d.n_dofs, dtype=float)
    assert np.allclose(cell_indicator(d.dofmap, alpha), alpha[d.dofmap.cell_dofs].mean(axis=1))


def test_no_marks_leave_state_unchanged(rng):
    sw = ShallowWater()
    d = Discretization(random_mesh(rng), 1)
    U = random_field(sw, rng, d)
    new, U2, rep = transfer(sw, d, U, {k: Mark.KEEP for k in d.dofmap.cells})
    assert new is d
    assert np.max(np.abs(U2 - U)) <= 1e-13


def test_refining_constant_field_is_exact():
    sw = ShallowWater()
    d = Discretization(MeshForest.uniform(2, 2), 2)
    U = np.tile([0.7, 0.1, -0.2], (d.n_dofs, 1))
    new, U2, _ = transfer(sw, d, U, {(0, 0, 0): Mark.REFINE})
    assert new.dofmap.n_cells == 7
    assert np.allclose(U2, [0.7, 0.1, -0.2], rtol=1e-14, atol=1e-15)


def test_coarsening_linear_field():
    sw = ShallowWater()
    d = Discretization(MeshForest.uniform(1, 1, level=1), 1)
    x, y = d.dofmap.coords.T
    h = 1.0 + x + 0.5 * y
    U = np.stack([h, 0 * h, 0 * h], axis=1)
    new, U2, rep = transfer(sw, d, U, {k: Mark.COARSEN for k in d.dofmap.cells})
    assert new.dofmap.n_cells == 1
    assert np.allclose(rep.totals_after, rep.totals_before, rtol=1e-15)
    assert np.all((U2[:, 0] >= h.min() - 1e-14) & (U2[:, 0] <= h.max() + 1e-14))
    xn, yn = new.dofmap.coords.T
    assert np.allclose(U2[:, 0], 1.0 + xn + 0.5 * yn, atol=1e-14)


def test_random_transfers_conserve_and_stay_admissible(system, degree, rng):
    for _ in range(4):
        d = Discretization(random_mesh(rng, levels=3), degree)
        U = random_field(system, rng, d)
        new, U2, rep = transfer(system, d, U, random_marks(d.mesh, rng))
        scale = d.mass.m_tilde @ np.abs(U)
        assert np.all(np.abs(rep.totals_after - rep.totals_before) <= 1e-12 * scale)
        assert rep.constraint_residual <= 1e-13 * np.abs(U).max()
        assert np.all(system.is_admissible(U2[new.constraints.free_dofs]))
        psi_before = system.constraint_values(U).min(axis=0)
        psi_after = system.constraint_values(U2[new.constraints.free_dofs]).min(axis=0)
        assert np.all(psi_after >= psi_before - 1e-12 * np.abs(psi_before).max())


def test_adaptation_cycle_refines_front():
    sw = ShallowWater()
    d = Discretization(MeshForest.uniform(4, 1, ((0.0, 4.0), (0.0, 1.0)), max_level=2), 1)
    x = d.dofmap.coords[:, 0]
    U = np.stack([np.where(x <= 2.0, 1.0, 0.0), 0 * x, 0 * x], axis=1)
    new, U2, rep = adaptation_cycle(sw, d, U, IndicatorConfig(rounds=0, max_level=2))
    assert rep.n_refined > 0
    assert constraint_residual(new.constraints, U2) == 0.0
    assert np.allclose(rep.totals_after, rep.totals_before, rtol=1e-14)
