"""Randomised properties of the projection and the indicator."""
import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from idpamr.adaptivity import Discretization, smoothness_indicator
from idpamr.mesh import MeshForest, Status
from idpamr.projection import Bounds, CellTransferRecord, element_project, projection_operator
from idpamr.systems import IdealGasEuler, ShallowWater

SW, EU = ShallowWater(), IdealGasEuler()
PROFILE = settings(max_examples=60, deadline=None)
depth = st.floats(0.0, 10.0)
nonzero = st.floats(1e-3, 10.0)
vel = st.floats(-5.0, 5.0)


@st.composite
def sw_cells(draw, n):
    h = np.array(draw(st.lists(st.one_of(st.just(0.0), depth), min_size=n, max_size=n)))
    u = np.array(draw(st.lists(vel, min_size=n, max_size=n)))
    v = np.array(draw(st.lists(vel, min_size=n, max_size=n)))
    return np.stack([h, h * u, h * v], axis=1)


@st.composite
def euler_cells(draw, n):
    rho = np.array(draw(st.lists(nonzero, min_size=n, max_size=n)))
    p = np.array(draw(st.lists(nonzero, min_size=n, max_size=n)))
    u = np.array(draw(st.lists(vel, min_size=n, max_size=n)))
    return EU.from_primitive(rho, u, -u[::-1], p)


def check(system, op, U):
    res = element_project(system, op, U)
    before = op.mu @ U
    after = op.m @ res.states
    scale = op.mu @ np.abs(U) + 1e-300
    assert np.all(np.abs(after - before) <= 1e-12 * scale)
    assert np.all(Bounds.from_states(system, U).contains(system, res.states, 1e-12))
    assert np.array_equal(res.limiter, res.limiter.T)


@PROFILE
@given(kind=st.sampled_from(["coarsen", "refine", "persist"]), p=st.sampled_from([1, 2]), data=st.data())
def test_shallow_water_projection(kind, p, data):
    op = projection_operator(p, kind)
    check(SW, op, data.draw(sw_cells(op.n_source)))


@PROFILE
@given(kind=st.sampled_from(["coarsen", "refine", "persist"]), p=st.sampled_from([1, 2]), data=st.data())
def test_euler_projection(kind, p, data):
    op = projection_operator(p, kind)
    check(EU, op, data.draw(euler_cells(op.n_source)))


_DISC = Discretization(MeshForest.uniform(3, 3), 1)


@PROFILE
@given(
    Q=arrays(np.float64, (_DISC.n_dofs,), elements=st.floats(-1e3, 1e3)),
    c=st.sampled_from([1e-3, 1.0, 1e3]),
    kappa=st.floats(0.0, 1.0),
)
def test_indicator_scale_invariance(Q, c, kappa):
    a = smoothness_indicator(_DISC.mass.beta, Q, kappa)
    b = smoothness_indicator(_DISC.mass.beta, c * Q, kappa)
    assert np.all((a >= 0) & (a <= 1 + 1e-12))
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


@PROFILE
@given(
    level=st.integers(0, 20),
    i=st.integers(0, 2**20 - 1),
    j=st.integers(0, 2**20 - 1),
    status=st.sampled_from(list(Status)),
    payload=arrays(np.float64, (4, 3), elements=st.floats(allow_nan=False)),
)
def test_record_roundtrip(level, i, j, status, payload):
    rec = CellTransferRecord((level, i, j), status, payload)
    back, end = CellTransferRecord.unpack_from(rec.pack(), 0, 3)
    assert end == len(rec.pack())
    assert back.key == (level, i, j) and back.status == status
    assert np.array_equal(back.payload, payload)
