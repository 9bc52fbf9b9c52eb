import os
import subprocess
import sys

import numpy as np
import pytest

from idpamr import _kernels
from idpamr.kernel_bench import time_kernels

needs_ext = pytest.mark.skipif("cython" not in _kernels.BACKENDS, reason="compiled extension not built")


@needs_ext
@pytest.mark.parametrize("system", ["shallow_water", "euler"])
@pytest.mark.parametrize("degree", [1, 2])
def test_backends_agree(system, degree):
    r = time_kernels(system, level=3, p=degree, repeat=1)
    assert r["max_abs_diff"] <= 1e-12


@needs_ext
def test_backends_agree_near_dry_states():
    from idpamr.adaptivity import Discretization
    from idpamr.mesh import MeshForest
    from idpamr.systems import ShallowWater

    sw = ShallowWater(h_cut=1e-6)
    d = Discretization(MeshForest.uniform(1, 1, level=3), 1)
    rng = np.random.default_rng(0)
    n = d.n_dofs
    h = rng.choice([0.0, 1e-9, 1e-6, 1e-3, 1.0], size=n)
    U = np.ascontiguousarray(np.stack([h, h * rng.normal(size=n), h * rng.normal(size=n)], axis=1))
    args = (0, sw.kernel_params(), U, *d.mass.graph)
    r1, d1 = _kernels.get_backend("python").low_order_rhs(*args)
    r2, d2 = _kernels.get_backend("cython").low_order_rhs(*args)
    assert np.allclose(r1, r2, rtol=1e-13, atol=1e-15)
    assert np.allclose(d1, d2, rtol=1e-13, atol=1e-15)


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        _kernels.get_backend("fortran")


def test_pure_python_selected_by_environment():
    env = dict(os.environ, IDPAMR_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "import idpamr._kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@needs_ext
@pytest.mark.parametrize("kind", ["coarsen", "refine"])
@pytest.mark.parametrize("degree", [1, 2])
def test_element_projection_backends_agree(monkeypatch, kind, degree):
    import idpamr.projection as pj
    from conftest import random_state
    from idpamr.systems import IdealGasEuler, ShallowWater

    rng = np.random.default_rng(degree)
    op = pj.projection_operator(degree, kind)
    for system in (ShallowWater(), IdealGasEuler()):
        src = random_state(system, rng, 40 * op.n_source).reshape(40, op.n_source, -1)
        fast = pj.element_project(system, op, src)
        with monkeypatch.context() as m:
            m.setattr(pj, "element_limits_kernel", lambda: None)
            m.setattr(pj, "element_directions_kernel", lambda: None)
            slow = pj.element_project(system, op, src)
        assert np.any(fast.limiter < 1)
        scale = np.abs(src).max()
        assert np.allclose(fast.directions, slow.directions, rtol=1e-12, atol=1e-13 * scale)
        assert np.allclose(fast.limiter, slow.limiter, rtol=1e-10, atol=1e-12)
        assert np.allclose(fast.states, slow.states, rtol=1e-12, atol=1e-12 * scale)


@needs_ext
def test_line_limiter_backends_agree(monkeypatch):
    import idpamr.projection as pj
    from conftest import random_state
    from idpamr.systems import IdealGasEuler, ShallowWater

    rng = np.random.default_rng(4)
    for system in (ShallowWater(), IdealGasEuler()):
        A = random_state(system, rng, 500, dry_fraction=0.0)
        B = random_state(system, rng, 500, dry_fraction=0.0)
        bounds = pj.Bounds.from_states(system, np.stack([A, B], axis=1))
        P = 1.5 * (random_state(system, rng, 500, dry_fraction=0.0) - A)
        P[::7] = 0.0
        fast = pj.limit_line(system, bounds, A, P)
        with monkeypatch.context() as m:
            m.setattr(pj, "element_limits_kernel", lambda: None)
            slow = pj.limit_line(system, bounds, A, P)
        assert 0 < np.mean(fast < 1) < 1
        assert np.all(fast[::7] == 1.0)
        assert np.allclose(fast, slow, rtol=1e-10, atol=1e-12)
