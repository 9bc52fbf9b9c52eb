"""Smoothness indicator, marking and the mesh adaptation cycle."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .assembly import MassData, assemble
from .fe import build_constraints, build_dof_map, constraint_residual
from .mesh import Mark, MeshForest, resolve_marks, statuses
from .projection import RedistributionPlan, attach, nodal_average, redistribute, unpack


@dataclass
class IndicatorConfig:
    quantities: tuple[str, ...] = ("h",)
    kappa: float = 1.0
    rounds: int = 2
    alpha_ref: float = 0.2
    alpha_coarsen: float | None = None
    period: int = 10
    max_level: int = 5

    def __post_init__(self):
        if self.alpha_coarsen is None:
            self.alpha_coarsen = self.alpha_ref / 4.0
        if not 0.0 <= self.alpha_coarsen <= self.alpha_ref:
            raise ValueError("need 0 <= alpha_coarsen <= alpha_ref")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("indicator kappa must lie in [0, 1]")
        if self.rounds < 0:
            raise ValueError("rounds must be nonnegative")


def smoothness_indicator(beta: sp.csr_matrix, Q, kappa: float, constrained=None) -> np.ndarray:
    """Normalised Laplacian residual summed over quantities.

    ``Q`` has shape (ndofs, nq).  For each quantity
    ``n_i = sum_j beta_ij (Q_j - Q_i)``, ``d_i = sum_j |beta_ij| |Q_j - Q_i|``
    and the contribution is ``|n_i| / ((1 - kappa) d_i + kappa max d)``,
    taken as 0 where the denominator vanishes.
    """
    Q = np.asarray(Q, float)
    if Q.ndim == 1:
        Q = Q[:, None]
    beta = beta.tocsr()
    rows = np.repeat(np.arange(beta.shape[0]), np.diff(beta.indptr))
    cols = beta.indices
    diff = Q[cols] - Q[rows]
    n = np.zeros_like(Q)
    d = np.zeros_like(Q)
    np.add.at(n, rows, beta.data[:, None] * diff)
    np.add.at(d, rows, np.abs(beta.data)[:, None] * np.abs(diff))
    denom = (1.0 - kappa) * d + kappa * d.max(axis=0, initial=0.0)
    frac = np.divide(np.abs(n), denom, out=np.zeros_like(n), where=denom > 0)
    alpha = frac.sum(axis=1)
    if constrained is not None:
        alpha[constrained] = 0.0
    return alpha


def extend(alpha, stencil: sp.csr_matrix, rounds: int) -> np.ndarray:
    """``rounds`` applications of ``alpha_i <- max over {i} and its stencil``."""
    a = np.asarray(alpha, float).copy()
    S = stencil.tocsr()
    rows = np.repeat(np.arange(S.shape[0]), np.diff(S.indptr))
    for _ in range(rounds):
        new = a.copy()
        np.maximum.at(new, rows, a[S.indices])
        a = new
    return a


def cell_indicator(dofmap, alpha) -> np.ndarray:
    return np.asarray(alpha)[dofmap.cell_dofs].mean(axis=1)


def mark(dofmap, alpha_ext, config: IndicatorConfig) -> dict:
    """Threshold marking from the cell averages of the extended indicator."""
    ak = cell_indicator(dofmap, alpha_ext)
    marks = {}
    for key, a in zip(dofmap.cells, ak):
        if a >= config.alpha_ref and key[0] < config.max_level:
            marks[key] = Mark.REFINE
        elif a <= config.alpha_coarsen:
            marks[key] = Mark.COARSEN
        else:
            marks[key] = Mark.KEEP
    return marks


@dataclass
class Discretization:
    """Mesh, DoF map, constraints and geometric data of one epoch."""

    mesh: MeshForest
    p: int
    dofmap: object = field(init=False)
    constraints: object = field(init=False)
    mass: MassData = field(init=False)

    def __post_init__(self):
        self.dofmap = build_dof_map(self.mesh, self.p)
        self.constraints = build_constraints(self.mesh, self.dofmap)
        self.mass = assemble(self.dofmap, self.constraints)

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs

    @cached_property
    def plan(self) -> RedistributionPlan:
        """Redistribution data; fixed for the lifetime of the mesh."""
        return RedistributionPlan.build(self.constraints, self.mass.m_tilde)


def estimate(system, disc: Discretization, U_full, config: IndicatorConfig) -> np.ndarray:
    Q = np.stack([system.indicator_quantity(U_full, q) for q in config.quantities], axis=1)
    alpha = smoothness_indicator(disc.mass.beta, Q, config.kappa, disc.constraints.constrained)
    return extend(alpha, disc.mass.stencil, config.rounds)


@dataclass
class CycleReport:
    n_refined: int
    n_coarsened: int
    totals_before: np.ndarray
    totals_after: np.ndarray
    constraint_residual: float


def transfer(system, old: Discretization, U_full, marks, limit=True, fast_path=True):
    """Move ``U_full`` to the mesh obtained from ``marks``.

    Refinement stops at the mesh's ``max_level``.  Returns the new
    discretization, the new state and a CycleReport.
    """
    resolved = resolve_marks(old.mesh, marks)
    st = statuses(resolved)
    n_ref = sum(1 for v in resolved.values() if v == Mark.REFINE)
    n_coa = sum(1 for v in resolved.values() if v == Mark.COARSEN)
    before = old.mass.total(U_full)
    if n_ref == 0 and n_coa == 0:
        return old, U_full, CycleReport(0, 0, before, before, constraint_residual(old.constraints, U_full))
    records = attach(system, old.dofmap, U_full, st, limit=limit, fast_path=fast_path)
    new = Discretization(old.mesh.refined_coarsened(resolved), old.p)
    cell_states = unpack(system, new.dofmap, records, limit=limit, fast_path=fast_path)
    U_tilde = nodal_average(new.dofmap, cell_states, new.mass.cell_lumped, new.mass.m_tilde)
    red = redistribute(system, new.mass.m_tilde, U_tilde, new.constraints, limit=limit, fast_path=fast_path,
                       plan=new.plan)
    after = new.mass.total(red.states)
    res = constraint_residual(new.constraints, red.states)
    return new, red.states, CycleReport(n_ref, n_coa, before, after, res)


def adaptation_cycle(system, disc: Discretization, U_full, config: IndicatorConfig, limit=True, pinned=None):
    """ESTIMATE, MARK and transfer.  ``pinned`` is an optional predicate on
    cell bounds forcing refinement up to the maximum level."""
    alpha = estimate(system, disc, U_full, config)
    marks = mark(disc.dofmap, alpha, config)
    if pinned is not None:
        for key in marks:
            if pinned(disc.mesh.cell_bounds(key)):
                marks[key] = Mark.REFINE if key[0] < config.max_level else Mark.KEEP
    return transfer(system, disc, U_full, marks, limit=limit)
