"""File exports: nodal field CSVs and PGM slice images.

All formats are plain text and deterministic so run outputs diff cleanly.
"""

from __future__ import annotations

import numpy as np

from .mesh import MeshGrid

__all__ = ["export_field_csv", "read_field_csv", "slice_field", "write_pgm", "export_slices"]

_AXES = {"x": 0, "y": 1, "z": 2}


def export_field_csv(mesh: MeshGrid, values: np.ndarray, path) -> None:
    with open(path, "w") as f:
        f.write("node_id,x,y,z,value\n")
        for i, (x, y, z) in enumerate(mesh.node_coords.tolist()):
            f.write(f"{i},{x!r},{y!r},{z!r},{float(values[i])!r}\n")


def read_field_csv(path) -> np.ndarray:
    values = []
    with open(path) as f:
        header = f.readline()
        if not header.startswith("node_id"):
            raise ValueError(f"{path}: not a field CSV")
        for line in f:
            values.append(float(line.rsplit(",", 1)[1]))
    return np.array(values)


def slice_field(mesh: MeshGrid, values: np.ndarray, axis: str, coord: float) -> np.ndarray:
    """2D array of nodal values on the grid plane nearest to coord."""
    ax = _AXES[axis]
    nx, ny, nz = mesh.shape
    grid = np.asarray(values, dtype=float).reshape(nx + 1, ny + 1, nz + 1)
    idx = int(round(coord / mesh.spacing))
    idx = min(max(idx, 0), grid.shape[ax] - 1)
    return np.take(grid, idx, axis=ax)


def write_pgm(image: np.ndarray, path) -> None:
    """Plain (P2) PGM with pixel values round(255 * x / max(x))."""
    m = image.max()
    pix = np.zeros_like(image, dtype=np.int64) if m <= 0 else np.rint(255.0 * image / m).astype(np.int64)
    h, w = pix.shape
    with open(path, "w") as f:
        f.write(f"P2\n{w} {h}\n255\n")
        for row in pix:
            f.write(" ".join(str(v) for v in row) + "\n")


def export_slices(mesh: MeshGrid, values: np.ndarray, axes, coords, prefix) -> list[str]:
    paths = []
    for axis, coord in zip(axes, coords):
        img = slice_field(mesh, values, axis, coord)
        path = f"{prefix}_slice_{axis}{coord:g}.pgm"
        write_pgm(img, path)
        paths.append(path)
    return paths
