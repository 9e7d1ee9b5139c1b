"""Pose sets and grid-sampled signed distance fields for the body surface.

The field stores exact signed distances (angle-weighted pseudonormal sign)
sampled on a regular grid over the padded bounding box of the body; queries
interpolate value and gradient trilinearly. Out-of-bounds queries clamp to
the nearest bound sample and add the Euclidean excess.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .mesh import GeometryError, TriMesh

_MAGIC = b"WSDF"
_VERSION = 1


class ValidationError(ValueError):
    pass


def _closest_point_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p, all (n, 3).

    Returns (closest, bary) where bary holds weights (w_a, w_b, w_c).
    Region-based algorithm, vectorized.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    n = len(p)
    s = np.zeros(n)
    t = np.zeros(n)

    # face region (default)
    denom = va + vb + vc
    denom = np.where(denom == 0.0, 1.0, denom)
    s[:] = vb / denom
    t[:] = vc / denom

    # edge AB
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    div = d1 - d3
    div = np.where(div == 0.0, 1.0, div)
    s = np.where(on_ab, np.clip(d1 / div, 0, 1), s)
    t = np.where(on_ab, 0.0, t)
    # edge AC
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    div = d2 - d6
    div = np.where(div == 0.0, 1.0, div)
    t = np.where(on_ac, np.clip(d2 / div, 0, 1), t)
    s = np.where(on_ac, 0.0, s)
    # edge BC
    on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    div = (d4 - d3) + (d5 - d6)
    div = np.where(div == 0.0, 1.0, div)
    tt = np.clip((d4 - d3) / div, 0, 1)
    s = np.where(on_bc, 1.0 - tt, s)
    t = np.where(on_bc, tt, t)
    # vertex regions
    at_a = (d1 <= 0) & (d2 <= 0)
    s = np.where(at_a, 0.0, s)
    t = np.where(at_a, 0.0, t)
    at_b = (d3 >= 0) & (d4 <= d3)
    s = np.where(at_b, 1.0, s)
    t = np.where(at_b, 0.0, t)
    at_c = (d6 >= 0) & (d5 <= d6)
    s = np.where(at_c, 0.0, s)
    t = np.where(at_c, 1.0, t)

    s = np.clip(s, 0.0, 1.0)
    t = np.clip(t, 0.0, np.maximum(1.0 - s, 0.0))
    closest = a + s[:, None] * ab + t[:, None] * ac
    bary = np.stack([1.0 - s - t, s, t], axis=1)
    return closest, bary


class _PseudonormalMesh:
    """Per-feature angle-weighted pseudonormals for signed distance."""

    def __init__(self, mesh):
        self.mesh = mesh
        x = mesh.rest_positions
        t = mesh.triangles
        e1 = x[t[:, 1]] - x[t[:, 0]]
        e2 = x[t[:, 2]] - x[t[:, 0]]
        fn = np.cross(e1, e2)
        fn /= np.linalg.norm(fn, axis=1, keepdims=True)
        self.face_normals = fn

        vn = np.zeros_like(x)
        for corner in range(3):
            vi = t[:, corner]
            ea = x[t[:, (corner + 1) % 3]] - x[vi]
            eb = x[t[:, (corner + 2) % 3]] - x[vi]
            cosang = np.einsum("ij,ij->i", ea, eb) / (
                np.linalg.norm(ea, axis=1) * np.linalg.norm(eb, axis=1)
            )
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vn, vi, ang[:, None] * fn)
        self.vertex_normals = vn

        edge_normals = {}
        for (va, vb), tris in mesh.edge_triangles.items():
            edge_normals[(va, vb)] = fn[tris].sum(axis=0)
        # edge pseudonormal per (face, corner): edge opposite that corner
        en = np.empty((len(t), 3, 3))
        for f in range(len(t)):
            for j in range(3):
                va, vb = sorted((int(t[f, (j + 1) % 3]), int(t[f, (j + 2) % 3])))
                en[f, j] = edge_normals[(va, vb)]
        self.edge_normals_fc = en

        self.centroids = x[t].mean(axis=1)
        self.tree = cKDTree(self.centroids)
        tri_pts = x[t]
        self.max_radius = np.linalg.norm(
            tri_pts - self.centroids[:, None, :], axis=2
        ).max()

    def signed_distance(self, points, k=32):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        m = len(self.mesh.triangles)
        k = min(k, m)
        cdist, cand = self.tree.query(points, k=k)
        cand = cand.reshape(len(points), k)
        cdist = cdist.reshape(len(points), k)
        out = np.empty(len(points))
        x = self.mesh.rest_positions
        t = self.mesh.triangles

        npts = len(points)
        prep = np.repeat(points, k, axis=0)
        tri = t[cand.ravel()]
        closest, bary = _closest_point_triangles(prep, x[tri[:, 0]], x[tri[:, 1]], x[tri[:, 2]])
        d2 = np.einsum("ij,ij->i", prep - closest, prep - closest).reshape(npts, k)
        best = np.argmin(d2, axis=1)
        rows = np.arange(npts)
        best_flat = rows * k + best
        best_tri = cand[rows, best]
        best_closest = closest[best_flat]
        best_bary = bary[best_flat]

        # Fall back to brute force where the candidate set cannot be
        # guaranteed to contain the true nearest triangle.
        if k < m:
            dist = np.sqrt(d2[rows, best])
            # safe iff no triangle outside the candidate set can be closer:
            # their centroids are at least as far as the k-th one
            unsafe = dist > cdist[:, -1] - self.max_radius
            for i in np.nonzero(unsafe)[0]:
                pi = np.repeat(points[i][None], m, axis=0)
                ci, bi = _closest_point_triangles(pi, x[t[:, 0]], x[t[:, 1]], x[t[:, 2]])
                dd = np.einsum("ij,ij->i", pi - ci, pi - ci)
                j = int(np.argmin(dd))
                best_tri[i] = j
                best_closest[i] = ci[j]
                best_bary[i] = bi[j]

        diff = points - best_closest
        dist = np.linalg.norm(diff, axis=1)

        # pseudonormal per closest feature (face / edge / vertex)
        tol = 1e-9
        zero = best_bary < tol
        nzero = zero.sum(axis=1)
        normals = self.face_normals[best_tri].copy()
        edge_case = nzero == 1
        if np.any(edge_case):
            j = np.argmax(zero[edge_case], axis=1)
            normals[edge_case] = self.edge_normals_fc[best_tri[edge_case], j]
        vert_case = nzero >= 2
        if np.any(vert_case):
            j = np.argmax(best_bary[vert_case], axis=1)
            verts = t[best_tri[vert_case]]
            normals[vert_case] = self.vertex_normals[verts[np.arange(len(j)), j]]

        sign = np.where(np.einsum("ij,ij->i", diff, normals) >= 0.0, 1.0, -1.0)
        return sign * dist


@dataclass
class SignedDistanceField:
    """Regular-grid signed distance samples with smooth interpolation.

    Queries use tricubic Catmull-Rom interpolation, so the interpolated
    value is C1 across cell boundaries and the returned gradient is the
    exact derivative of the returned value. (A gradient that jumps at
    cell faces, as piecewise-trilinear interpolation produces, leaves
    contact forces discontinuous and keeps equilibrium solves from
    reaching tight gradient tolerances.)
    """

    origin: np.ndarray  # (3,) lower corner
    cell: np.ndarray  # (3,) cell size per axis
    values: np.ndarray  # (nx, ny, nz) samples
    band: float  # narrow-band threshold in meters
    source: str = ""

    @property
    def upper(self):
        return self.origin + self.cell * (np.array(self.values.shape) - 1)

    @staticmethod
    def _cr_weights(t):
        """Catmull-Rom basis and derivative for fractional coordinates t."""
        t2 = t * t
        t3 = t2 * t
        w = np.stack(
            [
                -0.5 * t3 + t2 - 0.5 * t,
                1.5 * t3 - 2.5 * t2 + 1.0,
                -1.5 * t3 + 2.0 * t2 + 0.5 * t,
                0.5 * t3 - 0.5 * t2,
            ],
            axis=1,
        )
        dw = np.stack(
            [
                -1.5 * t2 + 2.0 * t - 0.5,
                4.5 * t2 - 5.0 * t,
                -4.5 * t2 + 4.0 * t + 0.5,
                1.5 * t2 - t,
            ],
            axis=1,
        )
        return w, dw

    def query(self, points):
        """Signed distance value and gradient at each point.

        Points outside the bounds clamp to the nearest in-bounds location;
        the Euclidean excess is added so far-away values keep growing.
        """
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1
        pts = points.reshape(-1, 3)
        lo = self.origin
        hi = self.upper
        clamped = np.clip(pts, lo, hi)
        excess = pts - clamped
        excess_norm = np.linalg.norm(excess, axis=1)

        rel = (clamped - lo) / self.cell
        shape = np.array(self.values.shape)
        idx = np.minimum(np.floor(rel).astype(np.int64), shape - 2)
        frac = rel - idx

        # 4-point stencil per axis with replicated borders
        offsets = np.arange(-1, 3)
        sten = [
            np.clip(idx[:, a, None] + offsets[None, :], 0, shape[a] - 1)
            for a in range(3)
        ]
        V64 = self.values[
            sten[0][:, :, None, None], sten[1][:, None, :, None], sten[2][:, None, None, :]
        ]
        wx, dwx = self._cr_weights(frac[:, 0])
        wy, dwy = self._cr_weights(frac[:, 1])
        wz, dwz = self._cr_weights(frac[:, 2])
        val = np.einsum("ni,nj,nk,nijk->n", wx, wy, wz, V64)
        grad = np.stack(
            [
                np.einsum("ni,nj,nk,nijk->n", dwx, wy, wz, V64) / self.cell[0],
                np.einsum("ni,nj,nk,nijk->n", wx, dwy, wz, V64) / self.cell[1],
                np.einsum("ni,nj,nk,nijk->n", wx, wy, dwz, V64) / self.cell[2],
            ],
            axis=1,
        )

        outside = excess_norm > 0.0
        if np.any(outside):
            val = val + excess_norm
            # value no longer depends on clamped coordinates through the grid
            clamped_axis = (pts < lo) | (pts > hi)
            grad = np.where(clamped_axis, 0.0, grad)
            gdir = np.zeros_like(grad)
            gdir[outside] = excess[outside] / excess_norm[outside, None]
            grad = grad + gdir

        if single:
            return float(val[0]), grad[0]
        return val, grad

    # -- binary cache ------------------------------------------------------

    def save(self, path):
        shape = self.values.shape
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _VERSION))
            fh.write(struct.pack("<3I", *shape))
            fh.write(struct.pack("<6d", *self.origin, *self.cell))
            fh.write(struct.pack("<d", self.band))
            fh.write(self.values.astype("<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _MAGIC:
                raise ValidationError(f"{path}: not an SDF cache file")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _VERSION:
                raise ValidationError(f"{path}: unsupported SDF cache version {version}")
            shape = struct.unpack("<3I", fh.read(12))
            vals6 = struct.unpack("<6d", fh.read(48))
            (band,) = struct.unpack("<d", fh.read(8))
            values = np.frombuffer(fh.read(), dtype="<f4").reshape(shape).astype(float)
        return cls(
            origin=np.array(vals6[:3]),
            cell=np.array(vals6[3:]),
            values=values,
            band=band,
        )


def build_sdf(body, resolution=128, padding=0.05):
    """Sample a signed distance field for a closed, orientable body mesh.

    ``resolution`` is the number of cells along each axis; sample counts
    are resolution + 1. Padding is a fraction of the bounding-box diagonal.
    """
    if not body.is_watertight():
        opened = body.open_edges()[:8]
        raise ValidationError(f"body mesh is not watertight; open edges: {opened}")
    _check_orientable(body)

    x = body.rest_positions
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    diag = np.linalg.norm(hi - lo)
    pad = padding * diag
    lo = lo - pad
    hi = hi + pad
    n = resolution + 1
    cell = (hi - lo) / resolution

    axes = [np.linspace(lo[a], hi[a], n) for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    pn = _PseudonormalMesh(body)
    corner = pn.signed_distance(lo[None, :])
    if corner[0] <= 0.0:
        raise ValidationError(
            "body mesh appears inside-out: a point outside the padded bounding "
            "box measures a negative signed distance; flip the triangle winding"
        )
    vals = np.empty(len(pts))
    chunk = 65536
    for s in range(0, len(pts), chunk):
        vals[s : s + chunk] = pn.signed_distance(pts[s : s + chunk])

    return SignedDistanceField(
        origin=lo,
        cell=cell,
        values=vals.reshape(n, n, n),
        band=3.0 * float(cell.max()),
    )


def _check_orientable(body):
    t = body.triangles
    # each undirected edge must be traversed once in each direction
    directed = {}
    for f in range(len(t)):
        for a, b in ((t[f, 0], t[f, 1]), (t[f, 1], t[f, 2]), (t[f, 2], t[f, 0])):
            key = (int(a), int(b))
            if key in directed:
                raise ValidationError(f"mesh is not consistently oriented at edge {key}")
            directed[key] = f


@dataclass
class PoseSet:
    """Rest body mesh plus K deformed poses of identical topology."""

    rest_body: TriMesh
    pose_bodies: list  # K position arrays (n, 3)
    labels: list
    sdfs: list = field(default_factory=list)  # SignedDistanceField or None per pose

    def __post_init__(self):
        if len(self.pose_bodies) < 1:
            raise ValidationError("a pose set needs at least one deformed pose")
        n = self.rest_body.num_vertices
        for k, vp in enumerate(self.pose_bodies):
            if len(vp) != n:
                raise ValidationError(f"pose {k} vertex count differs from rest body")
        if len(self.labels) != len(self.pose_bodies):
            raise ValidationError("pose labels must match pose count")
        if not self.sdfs:
            self.sdfs = [None] * len(self.pose_bodies)

    @property
    def num_poses(self):
        return len(self.pose_bodies)

    def build_sdfs(self, resolution=128, cache_dir=None):
        import os

        for k, vp in enumerate(self.pose_bodies):
            if self.sdfs[k] is not None:
                continue
            cache_path = None
            if cache_dir is not None:
                cache_path = os.path.join(
                    cache_dir, f"sdf_{self.labels[k]}_{resolution}.bin"
                )
                if os.path.exists(cache_path):
                    self.sdfs[k] = SignedDistanceField.load(cache_path)
                    continue
            posed = TriMesh(vp, self.rest_body.triangles)
            self.sdfs[k] = build_sdf(posed, resolution=resolution)
            if cache_path is not None:
                self.sdfs[k].save(cache_path)


def sdf_query(field, points):
    """Module-level convenience wrapper around SignedDistanceField.query."""
    return field.query(points)
