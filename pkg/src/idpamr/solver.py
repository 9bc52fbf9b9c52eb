"""Low-order invariant-domain preserving time stepping.

The spatial operator is the graph-viscosity method on the unconstrained
DoFs of the continuous space; SSP-RK3 (Shu-Osher form) advances it in
time as a convex combination of forward Euler steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .fe import LEFT, RIGHT, BOTTOM, TOP

SIDES = {"left": LEFT, "right": RIGHT, "bottom": BOTTOM, "top": TOP}


class SolverError(RuntimeError):
    """Inadmissible state produced or received by the solver."""


@dataclass
class BoundaryConditions:
    """Per-side tags: ``slip``, ``outflow`` or ``dirichlet``.

    ``dirichlet`` is a callable ``(coords, t) -> (states, mask)``
    returning prescribed states and the DoFs they apply to; it is applied
    after every stage on top of the side tags.
    """

    sides: dict = field(default_factory=lambda: {s: "slip" for s in SIDES})
    dirichlet: object = None

    def __post_init__(self):
        for side, kind in self.sides.items():
            if side not in SIDES:
                raise ValueError(f"unknown boundary side {side!r}")
            if kind not in ("slip", "outflow"):
                raise ValueError(f"unknown boundary type {kind!r} on {side}")


class Solver:
    """Graph-viscosity update on one discretization epoch.

    States passed in and out are vectors over the unconstrained DoFs.
    """

    def __init__(self, system, disc, bc: BoundaryConditions | None = None, cfl: float = 0.9, backend=None):
        self.system = system
        self.disc = disc
        self.bc = bc or BoundaryConditions()
        self.cfl = float(cfl)
        self.kernels = _kernels.get_backend(backend) if backend else _kernels.BACKENDS[_kernels.BACKEND]
        self.params = np.ascontiguousarray(system.kernel_params(), dtype=float)
        mass = disc.mass
        self.m = mass.m
        self.graph = mass.graph
        self.free = disc.constraints.free_dofs
        self.coords = disc.dofmap.coords[self.free]
        sides = disc.dofmap.boundary_sides[self.free]
        ix, iy = system.slip_momentum()
        self._slip = []
        for name, kind in self.bc.sides.items():
            if kind == "slip":
                comp = ix if SIDES[name] in (LEFT, RIGHT) else iy
                self._slip.append((np.nonzero(sides[:, SIDES[name]])[0], comp))
        self.b = mass.boundary_normals

    # -- spatial operator --------------------------------------------------
    def rhs(self, U):
        U = np.ascontiguousarray(U, dtype=float)
        indptr, indices, cx, cy, cxT, cyT = self.graph
        return self.kernels.low_order_rhs(self.system.system_id, self.params, U, indptr, indices, cx, cy, cxT, cyT)

    def max_dt(self, U, dsum=None) -> float:
        """Largest step keeping the forward Euler update a convex combination."""
        if dsum is None:
            _, dsum = self.rhs(U)
        pos = dsum > 0
        if not np.any(pos):
            return np.inf
        return float(np.min(self.m[pos] / (2.0 * dsum[pos])))

    def compute_dt(self, U) -> float:
        return self.cfl * self.max_dt(U)

    def apply_bc(self, U, t):
        """Impose slip and Dirichlet data in place; returns the mass-weighted change."""
        before = U.copy()
        for idx, comp in self._slip:
            U[idx, comp] = 0.0
        if self.bc.dirichlet is not None:
            states, mask = self.bc.dirichlet(self.coords, t)
            U[mask] = states[mask]
        return self.m @ (U - before)

    def boundary_flux(self, U):
        """``-sum_j f(U_j) . b_j``: the exchange through the boundary."""
        F = self.system.flux(U)
        return -np.einsum("jkd,jd->k", F, self.b)

    # -- time stepping -------------------------------------------------------
    def forward_euler_step(self, U, dt, t=0.0, check=True):
        """One forward Euler step; returns (U', boundary impulse).

        Raises StepRejected when ``dt`` exceeds the convexity bound of ``U``.
        """
        r, dsum = self.rhs(U)
        bound = self.max_dt(U, dsum)
        if dt > bound:
            raise StepRejected(bound)
        impulse = dt * self.boundary_flux(U)
        out = U + (dt / self.m)[:, None] * r
        impulse = impulse + self.apply_bc(out, t + dt)
        if check:
            self.check(out)
        return out, impulse

    def ssp_step(self, U, dt, t=0.0):
        """SSP-RK3 step; every stage is checked against its own bound."""
        U1, I0 = self.forward_euler_step(U, dt, t)
        V, I1 = self.forward_euler_step(U1, dt, t + dt)
        U2 = 0.75 * U + 0.25 * V
        W, I2 = self.forward_euler_step(U2, dt, t + 0.5 * dt)
        U3 = U / 3.0 + (2.0 / 3.0) * W
        return U3, I0 / 6.0 + I1 / 6.0 + (2.0 / 3.0) * I2

    def advance(self, U, t, t_final=np.inf, max_retries=20):
        """Adaptive SSP-RK3 step; returns (U', dt, impulse)."""
        dt = min(self.compute_dt(U), t_final - t)
        if not dt > 0.0:
            raise SolverError(f"time step collapsed to {dt}")
        for _ in range(max_retries):
            try:
                U_new, impulse = self.ssp_step(U, dt, t)
                return U_new, dt, impulse
            except StepRejected as exc:
                dt = self.cfl * exc.bound
                if not dt > 0.0:
                    raise SolverError(f"time step collapsed to {dt}") from None
        raise SolverError("time step rejected repeatedly")

    def check(self, U):
        ok = self.system.is_admissible(U)
        if not np.all(ok):
            i = int(np.argmin(ok))
            raise SolverError(f"inadmissible state {U[i]} at {self.coords[i]}")


class StepRejected(Exception):
    def __init__(self, bound):
        super().__init__(f"stage bound {bound:.3e} violated")
        self.bound = bound
