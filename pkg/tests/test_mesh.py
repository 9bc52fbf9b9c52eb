import numpy as np
import pytest

from conftest import random_marks, random_mesh
from idpamr.mesh import (
    Mark, MeshForest, Status, apply_marks, cell_id, cell_key, child_position, children, parent,
    refine_region, resolve_marks, statuses,
)


def test_uniform_forest_counts_and_area():
    mesh = MeshForest.uniform(5, 2, ((0.0, 75.0), (0.0, 30.0)), level=2)
    assert len(mesh) == 5 * 2 * 16
    assert mesh.total_area() == pytest.approx(75.0 * 30.0, rel=1e-14)
    assert mesh.cell_size(2) == (3.75, 3.75)


def test_family_relations():
    key = (2, 5, 3)
    kids = children(key)
    assert all(parent(k) == key for k in kids)
    assert [child_position(k) for k in kids] == [0, 1, 2, 3]


def test_cell_id_roundtrip():
    for key in [(0, 0, 0), (3, 7, 5), (20, 123456, 654321)]:
        assert cell_key(cell_id(key)) == key
    assert cell_id((1, 0, 0)) == 1 << 56


def test_face_neighbors_across_levels():
    mesh = apply_marks(MeshForest.uniform(2, 1), {(0, 0, 0): Mark.REFINE})
    rel = {(n, r) for n, r, _ in mesh.face_neighbors((0, 1, 0))}
    assert rel == {((1, 1, 0), "finer"), ((1, 1, 1), "finer")}
    assert mesh.face_neighbors((1, 1, 0), face=1) == [((0, 1, 0), "coarser", 1)]


def test_refinement_propagates_to_keep_balance():
    mesh = MeshForest.uniform(2, 2)
    mesh = refine_region(mesh, lambda b: b[0] < 1e-12 and b[1] < 1e-12, 3)
    assert mesh.finest_level == 3
    assert mesh.is_balanced()


def test_random_adaptation_stays_balanced_and_covers_domain(rng):
    for _ in range(10):
        mesh = random_mesh(rng, levels=4)
        assert mesh.is_balanced()
        assert mesh.total_area() == pytest.approx(1.0, rel=1e-13)


def test_incomplete_sibling_group_is_not_coarsened():
    mesh = apply_marks(MeshForest.uniform(1, 1), {(0, 0, 0): Mark.REFINE})
    marks = {k: Mark.COARSEN for k in mesh.cells}
    marks[(1, 1, 1)] = Mark.KEEP
    resolved = resolve_marks(mesh, marks)
    assert all(v is Mark.KEEP for v in resolved.values())


def test_refine_capped_at_max_level_and_level_zero_not_coarsened():
    mesh = MeshForest.uniform(1, 1, level=2, max_level=2)
    resolved = resolve_marks(mesh, {k: Mark.REFINE for k in mesh.cells})
    assert all(v is Mark.KEEP for v in resolved.values())
    coarse = MeshForest.uniform(1, 1)
    assert resolve_marks(coarse, {(0, 0, 0): Mark.COARSEN})[(0, 0, 0)] is Mark.KEEP


def test_mark_resolution_is_order_independent(rng):
    mesh = random_mesh(rng, levels=3)
    marks = random_marks(mesh, rng)
    a = resolve_marks(mesh, marks)
    b = resolve_marks(mesh, dict(reversed(list(marks.items()))))
    assert a == b


def test_statuses_cover_every_cell(rng):
    mesh = random_mesh(rng)
    st = statuses(resolve_marks(mesh, random_marks(mesh, rng)))
    assert set(st) == set(mesh.cells)
    assert set(st.values()) <= set(Status)


def test_degenerate_extent_rejected():
    with pytest.raises(ValueError):
        MeshForest.uniform(1, 1, ((0.0, 0.0), (0.0, 1.0)))


def test_cells_order_deterministic(rng):
    mesh = random_mesh(rng)
    again = MeshForest(mesh.nx, mesh.ny, mesh.extent, mesh.max_level, frozenset(sorted(mesh.active)))
    assert mesh.cells == again.cells
    assert np.all(np.diff([k[0] >= 0 for k in mesh.cells]) == 0)
