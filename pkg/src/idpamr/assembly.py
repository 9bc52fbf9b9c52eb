"""Mass matrices, transport vectors and the constrained Laplacian.

Cells of the forest are axis-aligned rectangles, so every local matrix is
a reference matrix times a geometric factor.  ``assemble_cell_mass`` also
handles a general bilinear map by quadrature; it is the reference path for
testing and for non-Cartesian experiments.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .fe import ConstraintSet, DofMap, ReferenceElement


def bilinear_map(vertices: np.ndarray, pts: np.ndarray):
    """Map reference points through the bilinear map of a quadrilateral.

    ``vertices`` are ordered (x0,y0), (x1,y0), (x0,y1), (x1,y1) like the
    local vertex numbering of the reference element.  Returns the physical
    points and the Jacobians, shapes (npts, 2) and (npts, 2, 2).
    """
    v = np.asarray(vertices, float)
    s, t = pts[:, 0], pts[:, 1]
    w = np.stack([(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=1)
    ds = np.stack([-(1 - t), (1 - t), -t, t], axis=1)
    dt = np.stack([-(1 - s), -s, (1 - s), s], axis=1)
    x = w @ v
    J = np.stack([ds @ v, dt @ v], axis=2)  # J[q, :, k] = d x / d xi_k
    return x, J


def assemble_cell_mass(vertices, element: ReferenceElement):
    """Consistent and lumped mass matrix of one (bilinearly mapped) cell."""
    _, J = bilinear_map(vertices, element.qpoints)
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    if np.any(det <= 0.0):
        raise ValueError("degenerate or inverted cell: nonpositive Jacobian")
    phi = element.basis(element.qpoints)
    M = np.einsum("q,qi,qj->ij", element.qweights * det, phi, phi)
    M = 0.5 * (M + M.T)
    return M, M.sum(axis=1)


def _global(dofmap: DofMap, local: np.ndarray) -> sp.csr_matrix:
    """Sum per-cell (ncells, nloc, nloc) blocks into a sparse matrix."""
    nloc = dofmap.element.nloc
    rows = np.repeat(dofmap.cell_dofs, nloc, axis=1).ravel()
    cols = np.tile(dofmap.cell_dofs, (1, nloc)).ravel()
    n = dofmap.n_dofs
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def accumulate_global(dofmap: DofMap, cell_lumped: np.ndarray) -> np.ndarray:
    """``m~_i = sum_K m_i^K`` over the cells containing ``i``."""
    return np.bincount(dofmap.cell_dofs.ravel(), weights=cell_lumped.ravel(), minlength=dofmap.n_dofs)


def _cell_sizes(dofmap: DofMap):
    b = dofmap.cell_bounds
    return b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]


def assemble_laplacian_beta(dofmap: DofMap, constraints: ConstraintSet) -> sp.csr_matrix:
    """Stiffness matrix condensed through the constraints.

    ``beta = C^T K C`` placed on the unconstrained indices; rows and
    columns of constrained indices are zero.
    """
    el = dofmap.element
    hx, hy = _cell_sizes(dofmap)
    kx, ky = el.stiffness
    local = (hy / hx)[:, None, None] * kx + (hx / hy)[:, None, None] * ky
    K = _global(dofmap, local)
    C = constraints.condensation
    Kc = (C.T @ K @ C).tocsr()
    E = sp.csr_matrix(
        (np.ones(len(constraints.free_dofs)), (constraints.free_dofs, np.arange(len(constraints.free_dofs)))),
        shape=(dofmap.n_dofs, len(constraints.free_dofs)),
    )
    beta = (E @ Kc @ E.T).tocsr()
    beta.eliminate_zeros()
    return beta


@dataclass
class MassData:
    """Geometric data of one mesh epoch.

    ``cell_lumped`` and ``m_tilde`` live on the intermediate space;
    ``m`` and the ``c`` vectors live on the unconstrained DoFs only.
    """

    dofmap: DofMap
    constraints: ConstraintSet
    cell_lumped: np.ndarray  # (ncells, nloc)
    m_tilde: np.ndarray  # (ndofs,)
    m: np.ndarray  # (nfree,)
    cx: sp.csr_matrix  # (nfree, nfree), sorted indices
    cy: sp.csr_matrix
    beta: sp.csr_matrix  # (ndofs, ndofs)

    def cell_mass(self, c: int) -> np.ndarray:
        return self.dofmap.cell_areas[c] * self.dofmap.element.mass

    @property
    def cell_masses(self) -> np.ndarray:
        return self.dofmap.cell_areas[:, None, None] * self.dofmap.element.mass[None]

    @cached_property
    def graph(self):
        """CSR arrays for the kernels: indptr, indices, cx, cy and the
        transposed values aligned with the same sparsity pattern."""
        cx, cy = self.cx, self.cy
        n = cx.shape[0]
        rows = np.repeat(np.arange(n), np.diff(cx.indptr))
        cxT = np.asarray(cx.T.tocsr()[rows, cx.indices]).ravel()
        cyT = np.asarray(cy.T.tocsr()[rows, cx.indices]).ravel()
        return (
            cx.indptr.astype(np.int64),
            cx.indices.astype(np.int64),
            np.ascontiguousarray(cx.data),
            np.ascontiguousarray(cy.data),
            np.ascontiguousarray(cxT),
            np.ascontiguousarray(cyT),
        )

    @cached_property
    def boundary_normals(self) -> np.ndarray:
        """``b_j = sum_i c_ij`` on free DoFs, i.e. the boundary integral of phi_j n."""
        return np.stack(
            [np.asarray(self.cx.sum(axis=0)).ravel(), np.asarray(self.cy.sum(axis=0)).ravel()], axis=1
        )

    @cached_property
    def stencil(self) -> sp.csr_matrix:
        """DoF adjacency (shared cell) on the intermediate space, with diagonal."""
        A = self.dofmap.dof_cells
        S = (A @ A.T).tocsr()
        S.data[:] = 1.0
        return S

    def total(self, U_full: np.ndarray) -> np.ndarray:
        """``sum_i m~_i U_i`` over the intermediate space."""
        return self.m_tilde @ U_full


def assemble(dofmap: DofMap, constraints: ConstraintSet) -> MassData:
    el = dofmap.element
    hx, hy = _cell_sizes(dofmap)
    area = hx * hy
    cell_lumped = area[:, None] * el.lumped[None, :]
    m_tilde = accumulate_global(dofmap, cell_lumped)
    C = constraints.condensation
    m = C.T @ m_tilde
    rcx, rcy = el.convection
    Cx = _global(dofmap, hy[:, None, None] * rcx[None])
    Cy = _global(dofmap, hx[:, None, None] * rcy[None])
    cx = (C.T @ Cx @ C).tocsr()
    cy = (C.T @ Cy @ C).tocsr()
    # share one sparsity pattern (including the diagonal) between cx and cy
    n = cx.shape[0]
    pattern = (abs(cx) + abs(cy) + abs(cx.T) + abs(cy.T) + sp.identity(n)).tocsr()
    pattern.sort_indices()
    rows = np.repeat(np.arange(n), np.diff(pattern.indptr))
    cols = pattern.indices

    def on_pattern(A):
        vals = np.asarray(A.tocsr()[rows, cols]).ravel()
        return sp.csr_matrix((vals, cols.copy(), pattern.indptr.copy()), shape=(n, n))

    cx, cy = on_pattern(cx), on_pattern(cy)
    beta = assemble_laplacian_beta(dofmap, constraints)
    return MassData(dofmap, constraints, cell_lumped, m_tilde, m, cx, cy, beta)
