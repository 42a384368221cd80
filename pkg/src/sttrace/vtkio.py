"""Minimal legacy-VTK (ASCII) writers for meshes and reconstructed surfaces."""

from __future__ import annotations

import numpy as np

_CELL_TYPES = {1: 3, 2: 5, 3: 10}  # n-simplex -> VTK line/triangle/tetra


def write_unstructured(path, points: np.ndarray, cells: np.ndarray,
                       point_data: dict | None = None, title: str = "sttrace") -> None:
    """Write points + simplex cells as a legacy-VTK unstructured grid."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cells = np.atleast_2d(np.asarray(cells, dtype=np.int64))
    npts, dim = points.shape
    if dim < 3:
        points = np.concatenate([points, np.zeros((npts, 3 - dim))], axis=1)
    k = cells.shape[1] - 1
    ctype = _CELL_TYPES[k]
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {npts} double\n")
        for p in points:
            f.write(f"{p[0]:.16g} {p[1]:.16g} {p[2]:.16g}\n")
        f.write(f"\nCELLS {len(cells)} {len(cells) * (k + 2)}\n")
        for c in cells:
            f.write(f"{k + 1} " + " ".join(str(int(v)) for v in c) + "\n")
        f.write(f"\nCELL_TYPES {len(cells)}\n")
        for _ in range(len(cells)):
            f.write(f"{ctype}\n")
        if point_data:
            f.write(f"\nPOINT_DATA {npts}\n")
            for name, vals in point_data.items():
                f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for v in np.asarray(vals, dtype=float):
                    f.write(f"{v:.16g}\n")


def write_mesh(path, mesh, cell_data_levels: bool = True) -> None:
    """Export a spatial mesh for inspection."""
    write_unstructured(path, mesh.vertices, mesh.elements, title="mesh")
    # refinement levels are appended as cell data for paraview filtering
    if cell_data_levels:
        with open(path, "a") as f:
            f.write(f"\nCELL_DATA {mesh.n_elements}\n")
            f.write("SCALARS level int 1\nLOOKUP_TABLE default\n")
            for lv in mesh.levels:
                f.write(f"{int(lv)}\n")


def write_surface(path, piece_verts: np.ndarray, values: np.ndarray | None = None) -> None:
    """Export reconstructed surface pieces (segments or triangles).

    piece_verts has shape (n_pieces, k+1, d); vertices are written per piece
    (not deduplicated), values (if given) are per piece vertex, flattened.
    """
    piece_verts = np.asarray(piece_verts, dtype=float)
    if piece_verts.size == 0:
        write_unstructured(path, np.zeros((0, 3)), np.zeros((0, 2), dtype=int))
        return
    npieces, nv, d = piece_verts.shape
    pts = piece_verts.reshape(-1, d)
    cells = np.arange(npieces * nv).reshape(npieces, nv)
    data = None
    if values is not None:
        data = {"u": np.asarray(values, dtype=float).ravel()}
    write_unstructured(path, pts, cells, point_data=data, title="surface")
