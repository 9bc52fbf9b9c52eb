"""Quadtree forest over a structured rectangular coarse grid.

Cells are addressed by integer keys ``(level, i, j)`` where ``i`` and ``j``
index the cell within the uniform grid of that level, i.e. a level ``l``
cell covers ``[i, i+1] x [j, j+1]`` in units of ``h / 2**l`` of the coarse
cell size ``h``.  Refinement bisects a cell into four congruent children,
coarsening merges a complete sibling group back into its parent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

CellKey = tuple[int, int, int]

LEFT, RIGHT, BOTTOM, TOP = 0, 1, 2, 3
_FACE_OFFSET = {LEFT: (-1, 0), RIGHT: (1, 0), BOTTOM: (0, -1), TOP: (0, 1)}
_OPPOSITE = {LEFT: RIGHT, RIGHT: LEFT, BOTTOM: TOP, TOP: BOTTOM}


class Mark(str, Enum):
    REFINE = "refine"
    COARSEN = "coarsen"
    KEEP = "keep"


class Status(str, Enum):
    PERSIST = "persist"
    REFINE = "will_refine"
    COARSEN = "will_coarsen"


def parent(key: CellKey) -> CellKey:
    level, i, j = key
    return (level - 1, i // 2, j // 2)


def children(key: CellKey) -> list[CellKey]:
    """Children in lexicographic order c = cx + 2*cy."""
    level, i, j = key
    return [(level + 1, 2 * i + cx, 2 * j + cy) for cy in (0, 1) for cx in (0, 1)]


def child_position(key: CellKey) -> int:
    """Index c = cx + 2*cy of ``key`` within its sibling group."""
    _, i, j = key
    return (i % 2) + 2 * (j % 2)


def siblings(key: CellKey) -> list[CellKey]:
    return children(parent(key))


def cell_id(key: CellKey) -> int:
    """Pack a cell key into an unsigned 64-bit integer."""
    level, i, j = key
    return (level << 56) | (i << 28) | j


def cell_key(cid: int) -> CellKey:
    return (cid >> 56, (cid >> 28) & ((1 << 28) - 1), cid & ((1 << 28) - 1))


@dataclass(frozen=True)
class MeshForest:
    nx: int
    ny: int
    extent: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))
    max_level: int = 8
    active: frozenset = field(default_factory=frozenset)
    epoch: int = 0

    @classmethod
    def uniform(cls, nx, ny, extent=((0.0, 1.0), (0.0, 1.0)), level=0, max_level=8):
        cells = frozenset(
            (level, i, j) for j in range(ny << level) for i in range(nx << level)
        )
        return cls(nx, ny, tuple(map(tuple, extent)), max_level, cells, 0)

    def __post_init__(self):
        (x0, x1), (y0, y1) = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ValueError("degenerate domain extent")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("coarse grid needs at least one cell per direction")

    # -- queries ---------------------------------------------------------
    def __len__(self):
        return len(self.active)

    def __contains__(self, key):
        return key in self.active

    @property
    def cells(self) -> list[CellKey]:
        """Active cells in a deterministic row-major order of their anchors."""
        cached = self.__dict__.get("_cells")
        if cached is None:
            top = max((k[0] for k in self.active), default=0)
            cached = sorted(
                self.active,
                key=lambda k: (k[2] << (top - k[0]), k[1] << (top - k[0]), k[0]),
            )
            object.__setattr__(self, "_cells", cached)
        return cached

    @property
    def finest_level(self) -> int:
        return max((k[0] for k in self.active), default=0)

    def cell_size(self, level: int) -> tuple[float, float]:
        (x0, x1), (y0, y1) = self.extent
        return (x1 - x0) / (self.nx << level), (y1 - y0) / (self.ny << level)

    def cell_bounds(self, key: CellKey) -> tuple[float, float, float, float]:
        level, i, j = key
        hx, hy = self.cell_size(level)
        x0, y0 = self.extent[0][0], self.extent[1][0]
        return x0 + i * hx, y0 + j * hy, x0 + (i + 1) * hx, y0 + (j + 1) * hy

    def vertices(self, key: CellKey) -> np.ndarray:
        """Counter-clockwise corner coordinates, shape (4, 2)."""
        xa, ya, xb, yb = self.cell_bounds(key)
        return np.array([[xa, ya], [xb, ya], [xb, yb], [xa, yb]])

    def area(self, key: CellKey) -> float:
        hx, hy = self.cell_size(key[0])
        return hx * hy

    def in_domain(self, key: CellKey) -> bool:
        level, i, j = key
        return 0 <= i < (self.nx << level) and 0 <= j < (self.ny << level)

    def face_neighbors(self, key: CellKey, face: int | None = None):
        """Active cells sharing a face with ``key``.

        Returns a list of ``(neighbor, relation, face)`` tuples where
        relation is one of ``"same"``, ``"finer"``, ``"coarser"``.
        """
        if key not in self.active:
            raise KeyError(f"{key} is not an active cell")
        faces = (LEFT, RIGHT, BOTTOM, TOP) if face is None else (face,)
        out = []
        for f in faces:
            di, dj = _FACE_OFFSET[f]
            nbr = (key[0], key[1] + di, key[2] + dj)
            if not self.in_domain(nbr):
                continue
            if nbr in self.active:
                out.append((nbr, "same", f))
                continue
            anc = nbr
            found = False
            while anc[0] > 0:
                anc = parent(anc)
                if anc in self.active:
                    out.append((anc, "coarser", f))
                    found = True
                    break
            if found:
                continue
            for leaf in self._leaves_on_face(nbr, _OPPOSITE[f]):
                out.append((leaf, "finer", f))
        return out

    def _leaves_on_face(self, key: CellKey, face: int) -> list[CellKey]:
        """Active descendants of ``key`` touching its ``face``."""
        if key in self.active:
            return [key]
        if key[0] >= 64:
            return []
        out = []
        for c in children(key):
            cx, cy = c[1] % 2, c[2] % 2
            touches = (
                (face == LEFT and cx == 0)
                or (face == RIGHT and cx == 1)
                or (face == BOTTOM and cy == 0)
                or (face == TOP and cy == 1)
            )
            if touches:
                out.extend(self._leaves_on_face(c, face))
        return out

    def adjacent_pairs(self) -> list[tuple[CellKey, CellKey]]:
        """Every face-adjacent pair of active cells, each listed once."""
        cached = self.__dict__.get("_pairs")
        if cached is None:
            cached = []
            for key in self.cells:
                for nbr, _, _ in self.face_neighbors(key, RIGHT):
                    cached.append((key, nbr))
                for nbr, _, _ in self.face_neighbors(key, TOP):
                    cached.append((key, nbr))
            object.__setattr__(self, "_pairs", cached)
        return cached

    def is_balanced(self) -> bool:
        return all(abs(a[0] - b[0]) <= 1 for a, b in self.adjacent_pairs())

    def total_area(self) -> float:
        return float(sum(self.area(k) for k in self.active))

    # -- mutation (returns new forests) ----------------------------------
    def refined_coarsened(self, resolved: Mapping[CellKey, Mark]) -> "MeshForest":
        new = set(self.active)
        for key, mark in resolved.items():
            if mark is Mark.REFINE:
                new.discard(key)
                new.update(children(key))
        for key, mark in resolved.items():
            if mark is Mark.COARSEN and key in new:
                for s in siblings(key):
                    new.discard(s)
                new.add(parent(key))
        return MeshForest(
            self.nx, self.ny, self.extent, self.max_level, frozenset(new), self.epoch + 1
        )


def _new_level(key: CellKey, mark: Mark) -> int:
    if mark is Mark.REFINE:
        return key[0] + 1
    if mark is Mark.COARSEN:
        return key[0] - 1
    return key[0]


def _complete_groups(mesh: MeshForest, m: dict) -> bool:
    """Veto coarsening of incomplete sibling groups; True if anything changed."""
    changed = False
    for key in mesh.cells:
        if m[key] is not Mark.COARSEN:
            continue
        sib = siblings(key)
        if not all(s in mesh.active and m[s] is Mark.COARSEN for s in sib):
            for s in sib:
                if s in m and m[s] is Mark.COARSEN:
                    m[s] = Mark.KEEP
            changed = True
    return changed


def resolve_marks(mesh: MeshForest, marks: Mapping[CellKey, Mark | str]) -> dict:
    """Repair a mark set so that the adapted mesh stays 1-irregular.

    Coarsen marks are vetoed and refine marks propagated until a fixed
    point is reached.  Both operations only move a mark upwards in the
    order coarsen < keep < refine, so the result does not depend on the
    order in which violations are visited.
    """
    m: dict[CellKey, Mark] = {}
    for key in mesh.cells:
        mark = Mark(marks.get(key, Mark.KEEP))
        if mark is Mark.REFINE and key[0] >= mesh.max_level:
            mark = Mark.KEEP
        if mark is Mark.COARSEN and key[0] == 0:
            mark = Mark.KEEP
        m[key] = mark

    pairs = mesh.adjacent_pairs()
    changed = True
    while changed:
        changed = _complete_groups(mesh, m)
        for a, b in pairs:
            la, lb = _new_level(a, m[a]), _new_level(b, m[b])
            if abs(la - lb) <= 1:
                continue
            low = a if la < lb else b
            if m[low] is Mark.COARSEN:
                for s in siblings(low):
                    if s in m and m[s] is Mark.COARSEN:
                        m[s] = Mark.KEEP
            else:
                m[low] = Mark.REFINE
            changed = True
    return m


def statuses(resolved: Mapping[CellKey, Mark]) -> dict[CellKey, Status]:
    table = {Mark.REFINE: Status.REFINE, Mark.COARSEN: Status.COARSEN, Mark.KEEP: Status.PERSIST}
    return {k: table[v] for k, v in resolved.items()}


def apply_marks(mesh: MeshForest, marks: Mapping[CellKey, Mark | str]) -> MeshForest:
    """Resolve ``marks`` to a balanced mark set and adapt the mesh."""
    return mesh.refined_coarsened(resolve_marks(mesh, marks))


def refine_region(mesh: MeshForest, predicate, levels: int) -> MeshForest:
    """Refine ``levels`` times every cell for which ``predicate(bounds)`` holds."""
    for _ in range(levels):
        marks = {k: Mark.REFINE for k in mesh.cells if predicate(mesh.cell_bounds(k))}
        mesh = apply_marks(mesh, marks)
    return mesh

