"""Legacy ASCII VTK output (and a reader for the same subset).

Only what the driver writes is supported: an unstructured grid of
triangles with point and cell data arrays.  Values are written with nine
significant digits, so a round trip reproduces them at float32 precision.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .fem.space import Field
from .mesh import Mesh

VTK_TRIANGLE = 5
_REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def vertex_values(field: Field) -> np.ndarray:
    """(NV, ncomp) nodal values of ``field`` at the mesh vertices."""
    mesh = field.space.mesh
    vals = field.values(_REF_VERTICES)  # (NC, 3, ncomp)
    out = np.zeros((mesh.num_vertices, vals.shape[-1]))
    out[mesh.cells.ravel()] = vals.reshape(-1, vals.shape[-1])
    return out


def _fmt(a: np.ndarray) -> str:
    return "\n".join(" ".join(f"{v:.9g}" for v in row) for row in np.atleast_2d(a))


def _data_block(arrays: dict, n: int) -> list[str]:
    lines = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        if arr.shape[0] != n:
            raise ValueError(f"array {name!r} has {arr.shape[0]} entries, expected {n}")
        name = name.replace(" ", "_")
        if arr.ndim == 1:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(arr[:, None])]
        elif arr.shape[1] == 2:
            lines += [f"VECTORS {name} double", _fmt(np.column_stack([arr, np.zeros(n)]))]
        else:
            lines += [f"SCALARS {name} double {arr.shape[1]}", "LOOKUP_TABLE default", _fmt(arr)]
    return lines


def write_vtk(path, mesh: Mesh, point_data: dict | None = None, cell_data: dict | None = None,
              title: str = "dwr_adapt") -> None:
    """Write ``mesh`` and data arrays as a legacy ASCII unstructured grid."""
    nv, nc = mesh.num_vertices, mesh.num_cells
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {nv} double", _fmt(np.column_stack([mesh.vertices, np.zeros(nv)])),
             f"CELLS {nc} {4 * nc}", "\n".join(f"3 {a} {b} {c}" for a, b, c in mesh.cells),
             f"CELL_TYPES {nc}", "\n".join([str(VTK_TRIANGLE)] * nc)]
    if point_data:
        lines += [f"POINT_DATA {nv}"] + _data_block(point_data, nv)
    if cell_data:
        lines += [f"CELL_DATA {nc}"] + _data_block(cell_data, nc)
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path) -> dict:
    """Parse a file produced by :func:`write_vtk`.

    Returns a dict with ``points`` (NV, 3), ``cells`` (NC, 3),
    ``point_data`` and ``cell_data`` (name -> array; vectors keep 3 columns).
    """
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile"):
        raise ValueError(f"{path}: not a legacy VTK file")
    words = " ".join(tokens[2:]).split()
    pos = 0
    out: dict = {"point_data": {}, "cell_data": {}}
    section = None
    counts = {}

    def take(n):
        nonlocal pos
        vals = words[pos:pos + n]
        pos += n
        return vals

    while pos < len(words):
        key = words[pos]
        pos += 1
        if key in ("ASCII", "DATASET", "UNSTRUCTURED_GRID"):
            continue
        if key == "POINTS":
            n = int(take(2)[0])
            out["points"] = np.array(take(3 * n), dtype=float).reshape(n, 3)
        elif key == "CELLS":
            n, size = (int(v) for v in take(2))
            out["cells"] = np.array(take(size), dtype=np.int64).reshape(n, 4)[:, 1:]
        elif key == "CELL_TYPES":
            take(int(take(1)[0]))
        elif key in ("POINT_DATA", "CELL_DATA"):
            section = "point_data" if key == "POINT_DATA" else "cell_data"
            counts[section] = int(take(1)[0])
        elif key == "SCALARS":
            name, _, ncomp = take(3)
            take(2)  # LOOKUP_TABLE default
            n, k = counts[section], int(ncomp)
            arr = np.array(take(n * k), dtype=float).reshape(n, k)
            out[section][name] = arr[:, 0] if k == 1 else arr
        elif key == "VECTORS":
            name, _ = take(2)
            n = counts[section]
            out[section][name] = np.array(take(3 * n), dtype=float).reshape(n, 3)
        else:
            raise ValueError(f"{path}: unexpected keyword {key!r}")
    return out
