"""Regular-grid tetrahedral meshing of a rectangular phantom.

Each voxel of the grid is split into 6 tetrahedra (Kuhn decomposition),
giving linear elements with closed-form integrals. Node ordering is
lexicographic in (x, y, z) so indices are stable across runs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = ["MeshGrid", "build_grid", "classify_nodes", "element_geometry", "export_mesh_csv"]

# Face tags for boundary triangles.
FACES = ("-x", "+x", "-y", "+y", "bottom", "top")


@dataclass(frozen=True)
class MeshGrid:
    """Voxel-derived tetrahedral mesh with node classification.

    node_class / illum_allowed are None until :func:`classify_nodes` runs.
    """

    node_coords: np.ndarray        # (N, 3) positions in mm
    tets: np.ndarray               # (T, 4) node indices, positive orientation
    surface_tris: np.ndarray       # (B, 3) node indices of boundary triangles
    surface_faces: np.ndarray      # (B,) index into FACES per triangle
    dims: tuple[float, float, float]
    spacing: float
    shape: tuple[int, int, int]    # voxels per axis
    node_class: np.ndarray | None = None     # (N,) bool, True = surface node
    illum_allowed: np.ndarray | None = None  # (N,) bool, True = top-face node

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    def tet_volumes(self) -> np.ndarray:
        p = self.node_coords[self.tets]
        e = p[:, 1:] - p[:, :1]
        return np.linalg.det(e) / 6.0

    def surface_areas(self) -> np.ndarray:
        p = self.node_coords[self.surface_tris]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def node_area_share(self, face: str | None = None) -> np.ndarray:
        """Per-node boundary area share: each triangle contributes Area/3 to
        its three vertices. Restricted to one face tag when given."""
        tris = self.surface_tris
        areas = self.surface_areas()
        if face is not None:
            sel = self.surface_faces == FACES.index(face)
            tris, areas = tris[sel], areas[sel]
        share = np.zeros(self.n_nodes)
        np.add.at(share, tris.ravel(), np.repeat(areas / 3.0, 3))
        return share


# The 6 Kuhn tetrahedra of the unit cube: each follows a monotone vertex
# path (0,0,0) -> (1,1,1), one per permutation of the axes.
_KUHN_PATHS = [
    tuple(np.cumsum([(0, 0, 0)] + [tuple(int(a == ax) for a in range(3)) for ax in perm], axis=0)[i] for i in range(4))
    for perm in itertools.permutations(range(3))
]


def build_grid(dims, spacing: float) -> MeshGrid:
    """Mesh a dims[0] x dims[1] x dims[2] mm box at the given voxel edge length.

    Raises ValueError for non-positive spacing or dims not an integer
    multiple of spacing.
    """
    dims = tuple(float(d) for d in dims)
    if spacing <= 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    shape = []
    for d in dims:
        if d <= 0:
            raise ValueError(f"dims must be positive, got {dims}")
        n = d / spacing
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"dim {d} is not an integer multiple of spacing {spacing}")
        shape.append(int(round(n)))
    nx, ny, nz = shape

    # Lexicographic node ordering in (x, y, z): index = (x*(ny+1) + y)*(nz+1) + z.
    xs = np.arange(nx + 1) * spacing
    ys = np.arange(ny + 1) * spacing
    zs = np.arange(nz + 1) * spacing
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    coords = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    def nid(ix, iy, iz):
        return (ix * (ny + 1) + iy) * (nz + 1) + iz

    # Voxel corner index offsets for each Kuhn path vertex.
    vx, vy, vz = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    vx, vy, vz = vx.ravel(), vy.ravel(), vz.ravel()
    tets = np.empty((6 * vx.size, 4), dtype=np.int64)
    for t, path in enumerate(_KUHN_PATHS):
        for v, (ox, oy, oz) in enumerate(path):
            tets[t::6, v] = nid(vx + ox, vy + oy, vz + oz)

    # Enforce positive orientation deterministically.
    p = coords[tets]
    vol = np.linalg.det(p[:, 1:] - p[:, :1]) / 6.0
    flip = vol < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
    if np.any(np.abs(vol) < 1e-14):
        raise RuntimeError("degenerate tetrahedron produced by grid decomposition")

    surface_tris, surface_faces = _boundary_triangles(tets, coords, dims)
    return MeshGrid(
        node_coords=coords,
        tets=tets,
        surface_tris=surface_tris,
        surface_faces=surface_faces,
        dims=dims,
        spacing=float(spacing),
        shape=(nx, ny, nz),
    )


def _boundary_triangles(tets, coords, dims):
    """Tet faces appearing exactly once are boundary; tag each with its
    phantom face. For a grid mesh every boundary triangle is axis-aligned."""
    faces = np.concatenate([
        tets[:, [0, 1, 2]], tets[:, [0, 1, 3]],
        tets[:, [0, 2, 3]], tets[:, [1, 2, 3]],
    ])
    key = np.sort(faces, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    boundary = faces[counts[inv] == 1]
    # Deterministic ordering.
    order = np.lexsort(np.sort(boundary, axis=1).T[::-1])
    boundary = boundary[order]

    tags = np.full(boundary.shape[0], -1, dtype=np.int64)
    p = coords[boundary]
    for axis, (lo_name, hi_name) in enumerate((("-x", "+x"), ("-y", "+y"), ("bottom", "top"))):
        on_lo = np.all(np.abs(p[:, :, axis]) < 1e-9, axis=1)
        on_hi = np.all(np.abs(p[:, :, axis] - dims[axis]) < 1e-9, axis=1)
        tags[on_lo] = FACES.index(lo_name)
        tags[on_hi] = FACES.index(hi_name)
    if np.any(tags < 0):
        raise RuntimeError("boundary triangle not on any phantom face")
    return boundary, tags


def classify_nodes(mesh: MeshGrid) -> MeshGrid:
    """Fill node_class (surface iff on the phantom boundary) and
    illum_allowed (top-face nodes only)."""
    c = mesh.node_coords
    tol = 1e-9
    on_face = np.zeros(mesh.n_nodes, dtype=bool)
    for axis in range(3):
        on_face |= np.abs(c[:, axis]) < tol
        on_face |= np.abs(c[:, axis] - mesh.dims[axis]) < tol
    illum = np.abs(c[:, 2] - mesh.dims[2]) < tol
    return MeshGrid(
        node_coords=mesh.node_coords,
        tets=mesh.tets,
        surface_tris=mesh.surface_tris,
        surface_faces=mesh.surface_faces,
        dims=mesh.dims,
        spacing=mesh.spacing,
        shape=mesh.shape,
        node_class=on_face,
        illum_allowed=illum,
    )


def build_phantom_mesh(dims, spacing: float) -> MeshGrid:
    """build_grid + classify_nodes in one call."""
    return classify_nodes(build_grid(dims, spacing))


def element_geometry(mesh: MeshGrid, tet_index: int):
    """Volume and the 4 constant gradients of the linear barycentric basis
    functions of one tetrahedron. Gradients sum to zero."""
    p = mesh.node_coords[mesh.tets[tet_index]]
    e = p[1:] - p[:1]
    vol = np.linalg.det(e) / 6.0
    if abs(vol) < 1e-14:
        raise RuntimeError(f"degenerate tetrahedron {tet_index}")
    # grad of basis 1..3 solve e @ grads.T = I; basis 0 closes partition of unity.
    g = np.linalg.solve(e, np.eye(3))  # columns are gradients of nodes 1..3
    grads = np.empty((4, 3))
    grads[1:] = g.T
    grads[0] = -g.T.sum(axis=0)
    return vol, grads


def export_mesh_csv(mesh: MeshGrid, nodes_path, tets_path) -> None:
    """Debug export: node coordinates and tet connectivity as CSV."""
    with open(nodes_path, "w") as f:
        f.write("node_id,x,y,z\n")
        for i, (x, y, z) in enumerate(mesh.node_coords.tolist()):
            f.write(f"{i},{x!r},{y!r},{z!r}\n")
    with open(tets_path, "w") as f:
        f.write("tet_id,n0,n1,n2,n3\n")
        for i, t in enumerate(mesh.tets):
            f.write(f"{i},{t[0]},{t[1]},{t[2]},{t[3]}\n")
