"""Straightest-path walking on triangle meshes and procedural clutch strips.

Paths are traced segment by segment in world space; at every edge crossing
the direction is transported into the next triangle by a rigid hinge
rotation about the shared edge, so coplanar neighbors continue the segment
in a straight line.
"""

from dataclasses import dataclass, field

import numpy as np

from .mesh import GeometryError, TriMesh

_VERTEX_EPS = 1e-12


class BoundaryHitError(GeometryError):
    """Path reached an open boundary before exhausting its length."""

    def __init__(self, message, partial_path=None):
        super().__init__(message)
        self.partial_path = partial_path


@dataclass(frozen=True)
class SurfacePoint:
    """Barycentric point (u, v, w=1-u-v) on a mesh element."""

    element: int
    u: float
    v: float

    @property
    def w(self):
        return 1.0 - self.u - self.v

    def validate(self):
        if self.u < -1e-12 or self.v < -1e-12 or self.u + self.v > 1.0 + 1e-12:
            raise GeometryError(f"barycentric coordinates out of range: {self}")

    def world(self, mesh, positions=None):
        x = mesh.rest_positions if positions is None else positions
        i0, i1, i2 = mesh.triangles[self.element]
        return self.w * x[i0] + self.u * x[i1] + self.v * x[i2]


@dataclass(frozen=True)
class ClutchSpec:
    """Low-dimensional clutch parametrization on the garment surface."""

    start: SurfacePoint
    direction: tuple  # barycentric direction (du, dv) on the start element
    length: float
    width: float
    attachment_stiffness_id: str = "default"

    def validate(self, mesh):
        if self.length <= 0.0:
            raise GeometryError("clutch length must be positive")
        if self.width <= 0.0:
            raise GeometryError("clutch width must be positive")
        self.start.validate()
        d = _bary_direction_to_world(mesh, self.start.element, self.direction)
        if np.linalg.norm(d) == 0.0:
            raise GeometryError("clutch direction has zero surface-projected magnitude")


@dataclass
class SurfacePath:
    """Piecewise-linear on-surface path: start, edge crossings, end."""

    points: list  # SurfacePoints; crossings live on the element they enter
    segment_elements: list  # element id per segment, len(points) - 1
    cumulative_lengths: np.ndarray

    @property
    def length(self):
        return float(self.cumulative_lengths[-1])

    @property
    def num_crossings(self):
        return len(self.points) - 2

    def world_points(self, mesh, positions=None):
        return np.array([p.world(mesh, positions) for p in self.points])


def _bary_direction_to_world(mesh, element, direction, positions=None):
    x = mesh.rest_positions if positions is None else positions
    i0, i1, i2 = mesh.triangles[element]
    du, dv = direction
    return du * (x[i1] - x[i0]) + dv * (x[i2] - x[i0])


def _barycentric(mesh, element, point):
    """Barycentric coordinates of an (in-plane) world point."""
    x = mesh.rest_positions
    i0, i1, i2 = mesh.triangles[element]
    e1 = x[i1] - x[i0]
    e2 = x[i2] - x[i0]
    r = point - x[i0]
    a11, a12, a22 = e1 @ e1, e1 @ e2, e2 @ e2
    b1, b2 = e1 @ r, e2 @ r
    det = a11 * a22 - a12 * a12
    u = (a22 * b1 - a12 * b2) / det
    v = (a11 * b2 - a12 * b1) / det
    return u, v


def _project_to_plane(vec, normal):
    return vec - (vec @ normal) * normal


def walk_path(mesh, start, direction, length, world_direction=None):
    """Trace a straightest path of the given length across the mesh.

    ``direction`` is a barycentric direction (du, dv) on the start element;
    callers that already have a world-space direction can pass it via
    ``world_direction`` instead.

    Raises BoundaryHitError (carrying the partial path) if the path exits
    an open boundary before the length is exhausted.
    """
    if length <= 0.0:
        raise GeometryError("path length must be positive")
    start.validate()

    if world_direction is None:
        world_direction = _bary_direction_to_world(mesh, start.element, direction)
    d = np.asarray(world_direction, dtype=float)
    elem = start.element
    normal = mesh.rest_normals[elem]
    d = _project_to_plane(d, normal)
    nd = np.linalg.norm(d)
    if nd == 0.0:
        raise GeometryError("direction has zero surface-projected magnitude")
    d = d / nd

    x = mesh.rest_positions
    points = [start]
    segment_elements = []
    lengths = [0.0]
    p = start.world(mesh)
    # weights aligned with the element's three vertices
    bary = np.array([start.w, start.u, start.v])
    remaining = length

    for _ in range(100 * mesh.num_elements + 100):
        tri = mesh.triangles[elem]
        # Barycentric rate of change along d (affine in the plane).
        u1, v1 = _barycentric(mesh, elem, p + d)
        rate = np.array([(1.0 - u1 - v1) - bary[0], u1 - bary[1], v1 - bary[2]])

        # Earliest coordinate to hit zero determines the exit edge.
        exit_t = np.inf
        exit_i = -1
        for i in range(3):
            if rate[i] < -1e-15:
                t = -bary[i] / rate[i]
                if 0.0 <= t < exit_t - _VERTEX_EPS:
                    exit_t, exit_i = t, i
                elif abs(t - exit_t) <= _VERTEX_EPS and exit_i >= 0:
                    # Near-vertex crossing: tie-break toward the
                    # lower-indexed adjacent triangle.
                    va, vb = [tri[j] for j in range(3) if j != i]
                    na = mesh.neighbor_across_edge(elem, va, vb)
                    vc, vd = [tri[j] for j in range(3) if j != exit_i]
                    nb = mesh.neighbor_across_edge(elem, vc, vd)
                    if na is not None and (nb is None or na < nb):
                        exit_t, exit_i = t, i

        if exit_t >= remaining or exit_i < 0:
            p_end = p + remaining * d
            u, v = _barycentric(mesh, elem, p_end)
            points.append(SurfacePoint(elem, u, v))
            segment_elements.append(elem)
            lengths.append(lengths[-1] + remaining)
            return SurfacePath(points, segment_elements, np.array(lengths))

        # Advance to the crossing.
        p_cross = p + exit_t * d
        bary_cross = bary + exit_t * rate
        bary_cross[exit_i] = 0.0
        # Nudge exact-vertex hits toward the element interior (staying on
        # the exit edge) so the walk continues deterministically.
        if (bary_cross < _VERTEX_EPS).sum() > 1:
            for j in range(3):
                if j != exit_i and bary_cross[j] < _VERTEX_EPS:
                    bary_cross[j] = _VERTEX_EPS
            bary_cross[exit_i] = 0.0
            bary_cross /= bary_cross.sum()
            p_cross = bary_cross[0] * x[tri[0]] + bary_cross[1] * x[tri[1]] + bary_cross[2] * x[tri[2]]

        va, vb = [tri[j] for j in range(3) if j != exit_i]
        nxt = mesh.neighbor_across_edge(elem, va, vb)
        remaining -= exit_t
        lengths.append(lengths[-1] + exit_t)
        segment_elements.append(elem)
        if nxt is None:
            u, v = _barycentric(mesh, elem, p_cross)
            points.append(SurfacePoint(elem, u, v))
            partial = SurfacePath(points, segment_elements, np.array(lengths))
            raise BoundaryHitError(
                f"path hit open boundary on element {elem} with {remaining:.6g} m left",
                partial_path=partial,
            )

        # Hinge-rotate the direction about the shared edge.
        a = x[vb] - x[va]
        a = a / np.linalg.norm(a)
        n1 = mesh.rest_normals[elem]
        n2 = mesh.rest_normals[nxt]
        b1 = np.cross(n1, a)
        b2 = np.cross(n2, a)
        d = (d @ a) * a + (d @ b1) * b2
        d = d / np.linalg.norm(d)

        elem = nxt
        p = p_cross
        u, v = _barycentric(mesh, elem, p)
        u, v = min(max(u, 0.0), 1.0), min(max(v, 0.0), 1.0)
        if u + v > 1.0:
            s = u + v
            u, v = u / s, v / s
        bary = np.array([1.0 - u - v, u, v])
        points.append(SurfacePoint(elem, u, v))

    raise GeometryError("path walking did not terminate")


# -- clutch strip generation -------------------------------------------------


@dataclass
class ClutchMesh:
    """Strip mesh extruded along a surface path.

    Vertices come in (left, center, right) triples per path point. Center
    points and the four endpoint side points are surface points on the
    garment; interior side points are normal-offset from their center.
    The deformed vertex layout for any garment pose is re-evaluated from
    the recipe via ``positions_for``.
    """

    spec: ClutchSpec
    path: SurfacePath
    triangles: np.ndarray
    surface_anchors: dict  # vertex id -> SurfacePoint (centers + endpoint sides)
    offset_sides: dict  # vertex id -> (center point index, sign)
    rest_vertices: np.ndarray
    endpoint_vertex_ids: np.ndarray  # 6 ids, three per end
    mesh: TriMesh = field(default=None)

    @property
    def num_vertices(self):
        return len(self.rest_vertices)

    def endpoint_surface_points(self):
        """Garment surface points the six endpoint vertices attach to."""
        return [self.surface_anchors[int(i)] for i in self.endpoint_vertex_ids]

    def positions_for(self, garment, garment_positions):
        """Vertex positions when the garment occupies ``garment_positions``."""
        npts = len(self.path.points)
        centers = np.array(
            [p.world(garment, garment_positions) for p in self.path.points]
        )
        verts = np.empty((3 * npts, 3))
        for vid, sp in self.surface_anchors.items():
            verts[vid] = sp.world(garment, garment_positions)
        normals = garment.element_normals(garment_positions)
        for vid, (ci, sign) in self.offset_sides.items():
            seg = min(ci, npts - 2)
            tangent = centers[seg + 1] - centers[seg]
            n = normals[self.path.segment_elements[seg]]
            side = np.cross(n, tangent)
            side /= np.linalg.norm(side)
            verts[vid] = centers[ci] + sign * 0.5 * self.spec.width * side
        return verts


def generate_clutch_mesh(garment, spec, thickness=5e-4):
    """Generate the strip mesh for a clutch spec on the rest garment.

    Produces 3*(k+2) vertices and 4*(k+1) triangles for k edge crossings.
    Endpoint side vertices are placed by walking half the width orthogonally
    along the surface; interior side vertices are offset +-width/2 along
    normal x path-direction.
    """
    spec.validate(garment)
    path = walk_path(garment, spec.start, spec.direction, spec.length)
    npts = len(path.points)
    centers = path.world_points(garment)

    surface_anchors = {}
    offset_sides = {}
    for i, p in enumerate(path.points):
        surface_anchors[3 * i + 1] = p  # center column

    # Endpoint side vertices: orthogonal on-surface walks of width/2.
    for i in (0, npts - 1):
        seg = 0 if i == 0 else npts - 2
        elem = path.segment_elements[seg]
        tangent = centers[seg + 1] - centers[seg]
        n = garment.rest_normals[elem]
        side = np.cross(n, tangent)
        side /= np.linalg.norm(side)
        start = path.points[i]
        if start.element != elem:
            u, v = _barycentric(garment, elem, start.world(garment))
            start = SurfacePoint(elem, u, v)
        for vid, sgn in ((3 * i, +1.0), (3 * i + 2, -1.0)):
            walk = walk_path(
                garment, start, None, 0.5 * spec.width, world_direction=sgn * side
            )
            surface_anchors[vid] = walk.points[-1]

    for i in range(1, npts - 1):
        offset_sides[3 * i] = (i, +1.0)
        offset_sides[3 * i + 2] = (i, -1.0)

    tris = []
    for i in range(npts - 1):
        l0, c0, r0 = 3 * i, 3 * i + 1, 3 * i + 2
        l1, c1, r1 = 3 * i + 3, 3 * i + 4, 3 * i + 5
        tris += [[l0, l1, c1], [l0, c1, c0], [c0, c1, r1], [c0, r1, r0]]
    triangles = np.array(tris, dtype=np.int64)

    endpoint_ids = np.array([0, 1, 2, 3 * npts - 3, 3 * npts - 2, 3 * npts - 1])

    clutch = ClutchMesh(
        spec=spec,
        path=path,
        triangles=triangles,
        surface_anchors=surface_anchors,
        offset_sides=offset_sides,
        rest_vertices=np.zeros((3 * npts, 3)),
        endpoint_vertex_ids=endpoint_ids,
    )
    clutch.rest_vertices = clutch.positions_for(garment, garment.rest_positions)
    clutch.mesh = TriMesh(clutch.rest_vertices, triangles, thickness=thickness)
    return clutch
