"""Legacy VTK (ASCII unstructured grid) snapshots of the active mesh."""
from __future__ import annotations

from pathlib import Path

import numpy as np

VTK_QUAD = 9


def corner_dofs(dofmap) -> np.ndarray:
    """Local-to-global DoF indices of the four cell corners, counter-clockwise."""
    n1 = dofmap.element.n1
    loc = np.array([0, n1 - 1, n1 * n1 - 1, n1 * (n1 - 1)])
    return dofmap.cell_dofs[:, loc]


def write_vtk(path, dofmap, states, names, cell_data=None, title="idpamr snapshot"):
    """Write one quad per cell with point data taken at the corner nodes.

    Points are duplicated per cell, so hanging nodes keep their own values.
    ``states`` has shape (ndofs, len(names)); ``cell_data`` maps a name to
    a per-cell array.
    """
    states = np.asarray(states, float)
    if states.ndim == 1:
        states = states[:, None]
    corners = corner_dofs(dofmap)
    nc = len(corners)
    b = dofmap.cell_bounds
    pts = np.stack(
        [b[:, [0, 1]], b[:, [2, 1]], b[:, [2, 3]], b[:, [0, 3]]], axis=1
    ).reshape(-1, 2)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(pts)} double")
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in pts]
    lines.append(f"CELLS {nc} {5 * nc}")
    lines += [f"4 {4 * c} {4 * c + 1} {4 * c + 2} {4 * c + 3}" for c in range(nc)]
    lines.append(f"CELL_TYPES {nc}")
    lines += [str(VTK_QUAD)] * nc
    lines.append(f"POINT_DATA {len(pts)}")
    vals = states[corners.ravel()]
    for k, name in enumerate(names):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in vals[:, k]]
    if cell_data:
        lines.append(f"CELL_DATA {nc}")
        for name, arr in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{float(v):.17g}" for v in np.asarray(arr).ravel()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_counts(path) -> dict:
    """Point and cell counts of a file written by :func:`write_vtk`."""
    out = {}
    for line in Path(path).read_text().splitlines():
        head = line.split()
        if head and head[0] in ("POINTS", "CELLS", "CELL_TYPES"):
            out[head[0]] = int(head[1])
    return out
