"""Lagrange elements at Gauss-Lobatto points, DoF enumeration of the
intermediate (collocation-identified) space and hanging-node constraints."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre

from .mesh import BOTTOM, LEFT, RIGHT, TOP, CellKey, MeshForest


def gauss_lobatto_points(p: int) -> np.ndarray:
    """Gauss-Lobatto points on [0, 1] for polynomial degree ``p``."""
    if p < 1:
        raise ValueError("degree must be >= 1")
    coeffs = np.zeros(p + 1)
    coeffs[-1] = 1.0
    interior = legendre.legroots(legendre.legder(coeffs)) if p > 1 else np.array([])
    pts = np.concatenate(([-1.0], np.sort(interior), [1.0]))
    pts = 0.5 * (pts + 1.0)
    # exact symmetric values, so that dyadic nodes (p=2 midpoint) are exact
    pts = 0.5 * (pts + (1.0 - pts[::-1]))
    return pts


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def lagrange_1d(nodes: np.ndarray, x) -> np.ndarray:
    """Values of the Lagrange polynomials through ``nodes``, shape (len(x), n)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    out = np.ones((len(x), n))
    for a in range(n):
        for b in range(n):
            if b != a:
                out[:, a] *= (x - nodes[b]) / (nodes[a] - nodes[b])
    return out


def lagrange_1d_deriv(nodes: np.ndarray, x) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    out = np.zeros((len(x), n))
    for a in range(n):
        for k in range(n):
            if k == a:
                continue
            term = np.full(len(x), 1.0 / (nodes[a] - nodes[k]))
            for b in range(n):
                if b != a and b != k:
                    term *= (x - nodes[b]) / (nodes[a] - nodes[b])
            out[:, a] += term
    return out


class ReferenceElement:
    """Tensor-product Q_p element on the unit square.

    Local node ``a + (p+1)*b`` sits at ``(x_a, x_b)`` with ``x`` the
    Gauss-Lobatto points.  Quadrature uses ``p+1`` Gauss-Legendre points
    per direction, exact for the degree ``2p`` products used here.
    """

    def __init__(self, p: int):
        self.p = p
        self.n1 = p + 1
        self.nloc = (p + 1) ** 2
        self.nodes_1d = gauss_lobatto_points(p)
        a, b = np.meshgrid(np.arange(self.n1), np.arange(self.n1), indexing="xy")
        self.node_ab = np.stack([a.ravel(), b.ravel()], axis=1)
        self.nodes = self.nodes_1d[self.node_ab]
        xq, wq = gauss_legendre(p + 1)
        X, Y = np.meshgrid(xq, xq, indexing="xy")
        self.qpoints = np.stack([X.ravel(), Y.ravel()], axis=1)
        self.qweights = np.outer(wq, wq).ravel()

    def basis(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        vx = lagrange_1d(self.nodes_1d, pts[:, 0])
        vy = lagrange_1d(self.nodes_1d, pts[:, 1])
        return vx[:, self.node_ab[:, 0]] * vy[:, self.node_ab[:, 1]]

    def grad(self, pts) -> np.ndarray:
        """Reference gradients, shape (npts, nloc, 2)."""
        pts = np.atleast_2d(pts)
        vx = lagrange_1d(self.nodes_1d, pts[:, 0])
        vy = lagrange_1d(self.nodes_1d, pts[:, 1])
        dx = lagrange_1d_deriv(self.nodes_1d, pts[:, 0])
        dy = lagrange_1d_deriv(self.nodes_1d, pts[:, 1])
        ia, ib = self.node_ab[:, 0], self.node_ab[:, 1]
        return np.stack([dx[:, ia] * vy[:, ib], vx[:, ia] * dy[:, ib]], axis=2)

    # reference matrices on the unit square
    @cached_property
    def mass(self) -> np.ndarray:
        phi = self.basis(self.qpoints)
        return np.einsum("q,qi,qj->ij", self.qweights, phi, phi)

    @cached_property
    def lumped(self) -> np.ndarray:
        return self.mass.sum(axis=1)

    @cached_property
    def convection(self) -> tuple[np.ndarray, np.ndarray]:
        """``(int phi_i d_x phi_j, int phi_i d_y phi_j)`` on the unit square."""
        phi = self.basis(self.qpoints)
        g = self.grad(self.qpoints)
        cx = np.einsum("q,qi,qj->ij", self.qweights, phi, g[:, :, 0])
        cy = np.einsum("q,qi,qj->ij", self.qweights, phi, g[:, :, 1])
        return cx, cy

    @cached_property
    def stiffness(self) -> tuple[np.ndarray, np.ndarray]:
        """``(int d_x phi_i d_x phi_j, int d_y phi_i d_y phi_j)``."""
        g = self.grad(self.qpoints)
        kx = np.einsum("q,qi,qj->ij", self.qweights, g[:, :, 0], g[:, :, 0])
        ky = np.einsum("q,qi,qj->ij", self.qweights, g[:, :, 1], g[:, :, 1])
        return kx, ky

    @cached_property
    def b_matrix(self) -> np.ndarray:
        """``b_ij = m_i (M^-1)_ij - delta_ij``; invariant under cell scaling."""
        return self.lumped[:, None] * np.linalg.inv(self.mass) - np.eye(self.nloc)

    @staticmethod
    def child_offset(c: int) -> np.ndarray:
        return 0.5 * np.array([c % 2, c // 2], dtype=float)

    @cached_property
    def transfer(self) -> np.ndarray:
        """``T[c, i, j] = int_{child c} phi_i^parent phi_j^child`` (unit parent)."""
        out = np.empty((4, self.nloc, self.nloc))
        for c in range(4):
            off = self.child_offset(c)
            pts = off + 0.5 * self.qpoints
            phi_p = self.basis(pts)
            phi_c = self.basis(self.qpoints)
            out[c] = 0.25 * np.einsum("q,qi,qj->ij", self.qweights, phi_p, phi_c)
        return out

    @cached_property
    def interpolation(self) -> np.ndarray:
        """``I[c, k, j] = phi_j^parent(child node k)``: parent -> child c values."""
        out = np.empty((4, self.nloc, self.nloc))
        for c in range(4):
            out[c] = self.basis(self.child_offset(c) + 0.5 * self.nodes)
        return out

    def face_nodes(self, face: int) -> np.ndarray:
        """Local node indices on ``face``, ordered by increasing coordinate."""
        return self._face_nodes[face]

    @cached_property
    def _face_nodes(self) -> dict:
        return {face: self._compute_face_nodes(face) for face in (LEFT, RIGHT, BOTTOM, TOP)}

    def _compute_face_nodes(self, face: int) -> np.ndarray:
        a, b = self.node_ab[:, 0], self.node_ab[:, 1]
        if face == LEFT:
            sel, order = a == 0, b
        elif face == RIGHT:
            sel, order = a == self.p, b
        elif face == BOTTOM:
            sel, order = b == 0, a
        else:
            sel, order = b == self.p, a
        idx = np.nonzero(sel)[0]
        return idx[np.argsort(order[idx])]


@lru_cache(maxsize=None)
def reference_element(p: int) -> ReferenceElement:
    return ReferenceElement(p)


@dataclass
class DofMap:
    """Global enumeration of the intermediate space.

    Nodes are identified across cells only when they sit on an entire
    shared vertex or edge; nodes on a hanging interface stay distinct.
    """

    mesh: MeshForest
    element: ReferenceElement
    cells: list
    cell_index: dict
    cell_dofs: np.ndarray  # (ncells, nloc)
    coords: np.ndarray  # (ndofs, 2)
    cell_bounds: np.ndarray  # (ncells, 4) -> x0, y0, x1, y1
    cell_levels: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.coords)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def p(self) -> int:
        return self.element.p

    @cached_property
    def cell_areas(self) -> np.ndarray:
        b = self.cell_bounds
        return (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])

    @cached_property
    def boundary_sides(self) -> np.ndarray:
        """Boolean (ndofs, 4) flags: node on LEFT, RIGHT, BOTTOM, TOP wall."""
        (x0, x1), (y0, y1) = self.mesh.extent
        tol = 1e-12 * max(x1 - x0, y1 - y0)
        x, y = self.coords[:, 0], self.coords[:, 1]
        return np.stack(
            [np.abs(x - x0) < tol, np.abs(x - x1) < tol, np.abs(y - y0) < tol, np.abs(y - y1) < tol],
            axis=1,
        )

    @cached_property
    def dof_cells(self) -> sp.csr_matrix:
        """Incidence matrix (ndofs, ncells)."""
        rows = self.cell_dofs.ravel()
        cols = np.repeat(np.arange(self.n_cells), self.element.nloc)
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_dofs, self.n_cells))


def _node_key(level, i, j, a, b, p, shift):
    X = (i * p + a) << shift
    Y = (j * p + b) << shift
    on_x = a == 0 or a == p
    on_y = b == 0 or b == p
    if on_x and on_y:
        return ("v", X, Y)
    if on_x:
        return ("ev", level, X, j, b)
    if on_y:
        return ("eh", level, i, Y, a)
    return ("c", level, i, j, a, b)


def build_dof_map(mesh: MeshForest, p: int) -> DofMap:
    el = reference_element(p)
    top = mesh.finest_level
    cells = mesh.cells
    keys: dict = {}
    cell_dofs = np.empty((len(cells), el.nloc), dtype=np.int64)
    bounds = np.empty((len(cells), 4))
    coords = []
    ab = [tuple(x) for x in el.node_ab]
    for c, key in enumerate(cells):
        level, i, j = key
        shift = top - level
        xa, ya, xb, yb = mesh.cell_bounds(key)
        bounds[c] = (xa, ya, xb, yb)
        for k, (a, b) in enumerate(ab):
            nk = _node_key(level, i, j, a, b, p, shift)
            d = keys.get(nk)
            if d is None:
                d = len(keys)
                keys[nk] = d
                coords.append(
                    (xa + (xb - xa) * el.nodes_1d[a], ya + (yb - ya) * el.nodes_1d[b])
                )
            cell_dofs[c, k] = d
    return DofMap(
        mesh=mesh,
        element=el,
        cells=cells,
        cell_index={k: n for n, k in enumerate(cells)},
        cell_dofs=cell_dofs,
        coords=np.array(coords, dtype=float).reshape(-1, 2),
        cell_bounds=bounds,
        cell_levels=np.array([k[0] for k in cells], dtype=np.int64),
    )


class ConstraintSet:
    """Closed set of algebraic constraints ``U_i = sum_j c^i_j U_j``."""

    def __init__(self, n_dofs: int, entries: dict[int, dict[int, float]]):
        self.n_dofs = n_dofs
        self.entries = {int(i): dict(c) for i, c in sorted(entries.items())}
        rows, cols, vals = [], [], []
        for i, coeffs in self.entries.items():
            if i in coeffs:
                raise ValueError(f"constraint {i} references itself")
            for j, c in sorted(coeffs.items()):
                rows.append(i)
                cols.append(j)
                vals.append(c)
        self.rows = np.array(rows, dtype=np.int64)
        self.cols = np.array(cols, dtype=np.int64)
        self.vals = np.array(vals, dtype=float)
        self.constrained = np.zeros(n_dofs, dtype=bool)
        self.constrained[list(self.entries)] = True
        self.constrained_dofs = np.array(list(self.entries), dtype=np.int64)
        self.free_dofs = np.nonzero(~self.constrained)[0]

    def __len__(self):
        return len(self.entries)

    def is_constrained(self, i: int) -> bool:
        return bool(self.constrained[i])

    def coefficients(self, i: int) -> dict[int, float]:
        return self.entries.get(i, {})

    def stencil(self, j: int) -> list[int]:
        """Constrained indices whose coefficient list contains ``j``."""
        return sorted(int(r) for r in self.rows[self.cols == j])

    def is_closed(self) -> bool:
        return not np.any(self.constrained[self.cols])

    def row_sums(self) -> np.ndarray:
        """Coefficient sums of the constrained rows, in ``constrained_dofs`` order."""
        return np.bincount(self.rows, weights=self.vals, minlength=self.n_dofs)[self.constrained_dofs]

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Coefficient matrix of shape (n_dofs, n_dofs); zero on free rows."""
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n_dofs, self.n_dofs))

    @cached_property
    def condensation(self) -> sp.csr_matrix:
        """Map ``C`` (n_dofs, n_free) from free values to a constrained vector."""
        col_of = -np.ones(self.n_dofs, dtype=np.int64)
        col_of[self.free_dofs] = np.arange(len(self.free_dofs))
        r = np.concatenate([self.free_dofs, self.rows])
        c = np.concatenate([col_of[self.free_dofs], col_of[self.cols]])
        v = np.concatenate([np.ones(len(self.free_dofs)), self.vals])
        return sp.csr_matrix((v, (r, c)), shape=(self.n_dofs, len(self.free_dofs)))


_OPPOSITE = {LEFT: RIGHT, RIGHT: LEFT, BOTTOM: TOP, TOP: BOTTOM}


@lru_cache(maxsize=None)
def _hanging_values(p: int, s: int) -> np.ndarray:
    """Coarse face basis at the nodes of fine sub-face ``s`` (0 or 1)."""
    nodes = reference_element(p).nodes_1d
    return lagrange_1d(nodes, 0.5 * (s + nodes))


def build_constraints(mesh: MeshForest, dofmap: DofMap) -> ConstraintSet:
    """Hanging-node constraints by interpolation of the coarse face basis.

    Every node of a finer neighbour lying inside a coarse face gets the
    coarse face's 1D Lagrange basis values at its position.  Under 2:1
    balance the coarse face nodes are never hanging themselves, so the
    set is closed by construction.
    """
    el = dofmap.element
    entries: dict[int, dict[int, float]] = {}
    for c, key in enumerate(dofmap.cells):
        for nbr, rel, face in mesh.face_neighbors(key):
            if rel != "finer":
                continue
            coarse = dofmap.cell_dofs[c, el.face_nodes(face)]
            f = dofmap.cell_index[nbr]
            fine = dofmap.cell_dofs[f, el.face_nodes(_OPPOSITE[face])]
            s = (nbr[2] - 2 * key[2]) if face in (LEFT, RIGHT) else (nbr[1] - 2 * key[1])
            vals = _hanging_values(el.p, s)
            coarse_set = set(coarse.tolist())
            for k, dof in enumerate(fine):
                dof = int(dof)
                if dof in coarse_set or dof in entries:
                    continue
                entries[dof] = {int(coarse[a]): float(vals[k, a]) for a in range(el.n1) if vals[k, a] != 0.0}
    return ConstraintSet(dofmap.n_dofs, entries)


def enforce(constraints: ConstraintSet, state: np.ndarray) -> np.ndarray:
    """Return a copy of ``state`` with every constraint imposed."""
    out = np.array(state, dtype=float, copy=True)
    if len(constraints):
        out[constraints.constrained_dofs] = (constraints.matrix @ out)[constraints.constrained_dofs]
    return out


def constraint_residual(constraints: ConstraintSet, state: np.ndarray) -> float:
    if not len(constraints):
        return 0.0
    r = state[constraints.constrained_dofs] - (constraints.matrix @ state)[constraints.constrained_dofs]
    return float(np.max(np.abs(r)))
