"""Triangle mesh container, membrane element kinematics, and OBJ i/o.

All positions are in meters. Meshes carry both rest and deformed nodal
positions with identical connectivity; per-element rest quantities (area,
local 2D frame) are precomputed once since they never change during a solve.
"""

import numpy as np


class GeometryError(ValueError):
    """Degenerate or inconsistent geometry (zero-area element, bad index)."""


class TriMesh:
    """Triangle surface mesh with rest and deformed nodal positions.

    Parameters
    ----------
    rest_positions : (n, 3) float array
    triangles : (m, 3) int array
    positions : (n, 3) float array, optional; defaults to the rest positions
    thickness : scalar or (m,) array, element thickness in meters
    """

    def __init__(self, rest_positions, triangles, positions=None, thickness=5e-4):
        self.rest_positions = np.asarray(rest_positions, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if positions is None:
            positions = self.rest_positions.copy()
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 3)

        n = len(self.rest_positions)
        if len(self.positions) != n:
            raise GeometryError("rest and deformed arrays have different lengths")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise GeometryError("triangle index out of range")

        m = len(self.triangles)
        self.thickness = np.broadcast_to(np.asarray(thickness, dtype=float), (m,)).copy()

        self._build_rest_frames()
        self._build_edges()

    # -- rest-state kinematics -------------------------------------------

    def _build_rest_frames(self):
        x = self.rest_positions
        t = self.triangles
        e1 = x[t[:, 1]] - x[t[:, 0]]
        e2 = x[t[:, 2]] - x[t[:, 0]]
        cross = np.cross(e1, e2)
        cross_norm = np.linalg.norm(cross, axis=1)
        self.rest_areas = 0.5 * cross_norm
        if np.any(self.rest_areas <= 0.0) or not np.all(np.isfinite(self.rest_areas)):
            bad = int(np.argmin(self.rest_areas))
            raise GeometryError(f"element {bad} has non-positive rest area")

        # Orthonormal in-plane frame (u, v) per element; rest edge matrix Dm
        # expresses the two edge vectors in that frame.
        u = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
        normal = cross / cross_norm[:, None]
        v = np.cross(normal, u)
        self.rest_normals = normal
        dm = np.empty((len(t), 2, 2))
        dm[:, 0, 0] = np.einsum("ij,ij->i", e1, u)
        dm[:, 0, 1] = np.einsum("ij,ij->i", e2, u)
        dm[:, 1, 0] = 0.0
        dm[:, 1, 1] = np.einsum("ij,ij->i", e2, v)
        self.rest_edge_matrix = dm
        self.rest_edge_matrix_inv = np.linalg.inv(dm)

    def _build_edges(self):
        """Edge -> incident triangle map; rejects non-manifold edges."""
        t = self.triangles
        edge_tris = {}
        for f in range(len(t)):
            for a, b in ((t[f, 0], t[f, 1]), (t[f, 1], t[f, 2]), (t[f, 2], t[f, 0])):
                key = (int(min(a, b)), int(max(a, b)))
                tris = edge_tris.setdefault(key, [])
                if len(tris) >= 2:
                    raise GeometryError(f"edge {key} shared by more than two triangles")
                tris.append(f)
        self.edge_triangles = edge_tris

    # -- queries ----------------------------------------------------------

    @property
    def num_vertices(self):
        return len(self.rest_positions)

    @property
    def num_elements(self):
        return len(self.triangles)

    @property
    def total_area(self):
        return float(self.rest_areas.sum())

    def neighbor_across_edge(self, element, va, vb):
        """Triangle on the other side of edge (va, vb), or None on a boundary."""
        key = (int(min(va, vb)), int(max(va, vb)))
        tris = self.edge_triangles.get(key, [])
        others = [f for f in tris if f != element]
        return others[0] if others else None

    def boundary_vertices(self):
        """Indices of vertices lying on an open boundary edge."""
        out = set()
        for (a, b), tris in self.edge_triangles.items():
            if len(tris) == 1:
                out.add(a)
                out.add(b)
        return np.array(sorted(out), dtype=np.int64)

    def element_centroids(self, rest=True):
        x = self.rest_positions if rest else self.positions
        return x[self.triangles].mean(axis=1)

    def element_normals(self, positions=None):
        x = self.rest_positions if positions is None else positions
        t = self.triangles
        cross = np.cross(x[t[:, 1]] - x[t[:, 0]], x[t[:, 2]] - x[t[:, 0]])
        return cross / np.linalg.norm(cross, axis=1, keepdims=True)

    def is_watertight(self):
        return all(len(tris) == 2 for tris in self.edge_triangles.values())

    def open_edges(self):
        return [e for e, tris in self.edge_triangles.items() if len(tris) != 2]

    def deformation_gradients(self, positions=None):
        """Per-element 3x2 deformation gradient mapping the rest tangent
        frame to the deformed edge vectors.

        Returns an (m, 3, 2) array; rest positions give the isometric
        embedding with unit singular values.
        """
        x = self.positions if positions is None else np.asarray(positions, dtype=float)
        t = self.triangles
        ds = np.stack([x[t[:, 1]] - x[t[:, 0]], x[t[:, 2]] - x[t[:, 0]]], axis=2)
        return ds @ self.rest_edge_matrix_inv


def element_quantities(mesh, positions=None):
    """Per-element rest area and deformation gradient for one pose."""
    return mesh.rest_areas, mesh.deformation_gradients(positions)


# -- OBJ i/o ---------------------------------------------------------------


def load_obj(path):
    """Read positions and triangular faces from a Wavefront OBJ file.

    Normals and texture coordinates are ignored; polygonal faces are
    rejected (the toolchain works on triangle meshes only).
    """
    verts = []
    faces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise GeometryError(f"{path}:{lineno}: face is not a triangle")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return np.asarray(verts, dtype=float), np.asarray(faces, dtype=np.int64)


def save_obj(path, positions, triangles):
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    with open(path, "w") as fh:
        for p in positions:
            fh.write("v %.17g %.17g %.17g\n" % (p[0], p[1], p[2]))
        for t in np.asarray(triangles, dtype=np.int64).reshape(-1, 3):
            fh.write("f %d %d %d\n" % (t[0] + 1, t[1] + 1, t[2] + 1))
