"""Procedural synthetic scenes used by tests, examples, and the CLI.

Four families:

* pinned strip -- a flat rectangular garment stretched between two pinned
  ends with one clutch spanning most of its length; isolates the clutch
  ON/OFF energy contrast.
* tiny strip -- a 12-element strip small enough for exhaustive design
  enumeration.
* sleeve -- an open cylinder worn over a capsule "arm" that bends at an
  elbow; one or two motions (flexion / extension).
* shirt -- a half-cylinder worn over a capsule torso that bends forward
  and sideways.
"""

import numpy as np

from .body import PoseSet, build_sdf
from .energy import AttachmentSet, Scene, coupling_from_clutch
from .materials import MaterialParams
from .mesh import GeometryError, TriMesh
from .paths import ClutchSpec, SurfacePoint, generate_clutch_mesh


# ---------------------------------------------------------------------------
# mesh generators


def grid_strip(length, width, nx, ny):
    """Flat strip in the z=0 plane, (nx+1)*(ny+1) vertices, 2*nx*ny triangles."""
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, width, ny + 1)
    verts = np.array([[x, y, 0.0] for x in xs for y in ys])
    tris = []
    for i in range(nx):
        for j in range(ny):
            a = i * (ny + 1) + j
            b = a + ny + 1
            tris.append([a, b, b + 1])
            tris.append([a, b + 1, a + 1])
    return verts, np.array(tris, dtype=np.int64)


def tube(radius, x0, x1, n_around, n_along, arc=2.0 * np.pi, arc_start=0.0):
    """Open cylindrical tube along x. ``arc`` < 2*pi gives a partial shell."""
    closed = abs(arc - 2.0 * np.pi) < 1e-12
    n_theta = n_around if closed else n_around + 1
    xs = np.linspace(x0, x1, n_along + 1)
    thetas = arc_start + arc * np.arange(n_theta) / (n_around if closed else n_around)
    verts = []
    for x in xs:
        for th in thetas:
            verts.append([x, radius * np.cos(th), radius * np.sin(th)])
    verts = np.array(verts)
    tris = []
    cols = n_theta
    for i in range(n_along):
        for j in range(n_around):
            jn = (j + 1) % cols if closed else j + 1
            a = i * cols + j
            b = (i + 1) * cols + j
            c = (i + 1) * cols + jn
            d = i * cols + jn
            tris.append([a, b, c])
            tris.append([a, c, d])
    return verts, np.array(tris, dtype=np.int64)


def capsule(radius, length, n_theta=16, n_seg=8, n_cap=6):
    """Watertight capsule along x, centered at the origin.

    A cylinder of the given length with hemispherical caps; the caps end
    in single pole vertices so every edge is shared by two triangles.
    """
    half = 0.5 * length
    rings = []  # list of (x, ring radius)
    for i in range(1, n_cap + 1):  # -x cap, pole handled separately
        phi = 0.5 * np.pi * i / n_cap
        rings.append((-half - radius * np.cos(phi), radius * np.sin(phi)))
    for i in range(1, n_seg):
        rings.append((-half + length * i / n_seg, radius))
    for i in range(n_cap, 0, -1):
        phi = 0.5 * np.pi * i / n_cap
        rings.append((half + radius * np.cos(phi), radius * np.sin(phi)))

    verts = [[-half - radius, 0.0, 0.0]]
    for x, r in rings:
        for j in range(n_theta):
            th = 2.0 * np.pi * j / n_theta
            verts.append([x, r * np.cos(th), r * np.sin(th)])
    verts.append([half + radius, 0.0, 0.0])
    verts = np.array(verts)

    tris = []
    first = 1
    for j in range(n_theta):  # -x pole fan
        tris.append([0, first + j, first + (j + 1) % n_theta])
    for i in range(len(rings) - 1):
        a0 = first + i * n_theta
        b0 = first + (i + 1) * n_theta
        for j in range(n_theta):
            jn = (j + 1) % n_theta
            tris.append([a0 + j, b0 + j, b0 + jn])
            tris.append([a0 + j, b0 + jn, a0 + jn])
    last = len(verts) - 1
    base = first + (len(rings) - 1) * n_theta
    for j in range(n_theta):  # +x pole fan
        tris.append([last, base + (j + 1) % n_theta, base + j])
    # rings were laid out with inward winding; flip to outward normals
    return verts, np.array(tris, dtype=np.int64)[:, [0, 2, 1]]


# ---------------------------------------------------------------------------
# pose maps and surface-point helpers


def bend_points(points, pivot_x, angle, ramp, axis="z"):
    """Bend a point set about a hinge at x = pivot_x.

    The rotation angle ramps linearly from 0 to ``angle`` over
    [pivot_x, pivot_x + ramp] (smooth elbow rather than a crease) and
    stays at ``angle`` beyond; points left of the pivot are unchanged.
    """
    points = np.asarray(points, dtype=float)
    t = np.clip((points[:, 0] - pivot_x) / max(ramp, 1e-12), 0.0, 1.0)
    a = angle * t
    out = points.copy()
    rel = points - np.array([pivot_x, 0.0, 0.0])
    ca, sa = np.cos(a), np.sin(a)
    if axis == "z":
        out[:, 0] = pivot_x + ca * rel[:, 0] - sa * rel[:, 1]
        out[:, 1] = ca * rel[:, 1] + sa * rel[:, 0]
    elif axis == "y":
        out[:, 0] = pivot_x + ca * rel[:, 0] + sa * rel[:, 2]
        out[:, 2] = ca * rel[:, 2] - sa * rel[:, 0]
    else:
        raise ValueError("bend axis must be 'y' or 'z'")
    return out


def locate_surface_point(mesh, point):
    """Closest on-surface point as a SurfacePoint (nearest element's plane)."""
    point = np.asarray(point, dtype=float)
    x = mesh.rest_positions
    t = mesh.triangles
    cents = mesh.element_centroids()
    order = np.argsort(np.linalg.norm(cents - point, axis=1))
    for e in order[: min(16, len(order))]:
        i0, i1, i2 = t[e]
        e1, e2 = x[i1] - x[i0], x[i2] - x[i0]
        r = point - x[i0]
        a11, a12, a22 = e1 @ e1, e1 @ e2, e2 @ e2
        b1, b2 = e1 @ r, e2 @ r
        det = a11 * a22 - a12 * a12
        u = (a22 * b1 - a12 * b2) / det
        v = (a11 * b2 - a12 * b1) / det
        if u >= -1e-9 and v >= -1e-9 and u + v <= 1.0 + 1e-9:
            u = min(max(u, 0.0), 1.0)
            v = min(max(v, 0.0), 1.0 - u)
            return SurfacePoint(int(e), u, v)
    e = int(order[0])
    return SurfacePoint(e, 1.0 / 3.0, 1.0 / 3.0)


def bary_direction(mesh, element, world_dir):
    """Barycentric direction (du, dv) whose world image is the projection
    of ``world_dir`` onto the element's plane."""
    x = mesh.rest_positions
    i0, i1, i2 = mesh.triangles[element]
    e1, e2 = x[i1] - x[i0], x[i2] - x[i0]
    n = mesh.rest_normals[element]
    d = np.asarray(world_dir, dtype=float)
    d = d - (d @ n) * n
    if np.linalg.norm(d) == 0.0:
        raise GeometryError("direction is normal to the element plane")
    a11, a12, a22 = e1 @ e1, e1 @ e2, e2 @ e2
    b1, b2 = e1 @ d, e2 @ d
    det = a11 * a22 - a12 * a12
    return ((a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det)


def _frozen_from_couplings(garment, couplings):
    frozen = np.zeros(garment.num_elements, dtype=bool)
    for c in couplings:
        frozen[c.elements] = True
    return frozen


def _finish_scene(garment, labels, pose_positions, clutches, attachments, **kw):
    couplings = [coupling_from_clutch(c) for c in clutches]
    attachments.clutch_couplings = couplings
    scene = Scene(
        garment=garment,
        pose_labels=list(labels),
        garment_pose_positions=np.asarray(pose_positions, dtype=float),
        clutches=clutches,
        attachments=attachments,
        frozen_elements=_frozen_from_couplings(garment, couplings),
        **kw,
    )
    attachments.validate(scene)
    return scene


# ---------------------------------------------------------------------------
# scenes


def pinned_strip_scene(
    nx=16,
    ny=4,
    length=0.2,
    width=0.05,
    stretch=0.05,
    clutch_margin=0.002,
    clutch_width=0.01,
    anchor_stiffness=1e6,
):
    """Flat strip stretched between pinned ends, one clutch along its length.

    The single pose elongates the strip by ``stretch`` in x; both end
    columns are anchored at their stretched positions. The clutch spans
    the strip except for ``clutch_margin`` at each end; keeping the margin
    inside the anchored element columns routes the active load path
    directly from the anchors into the clutch, which is what produces the
    large ON/OFF energy contrast.
    """
    verts, tris = grid_strip(length, width, nx, ny)
    garment = TriMesh(verts, tris)

    posed = verts.copy()
    posed[:, 0] *= 1.0 + stretch

    y_line = width * (2.5 / 4.0)  # off the horizontal grid lines
    start = locate_surface_point(garment, [clutch_margin, y_line, 0.0])
    spec = ClutchSpec(
        start=start,
        direction=bary_direction(garment, start.element, [1.0, 0.0, 0.0]),
        length=length - 2.0 * clutch_margin,
        width=clutch_width,
    )
    clutch = generate_clutch_mesh(garment, spec)

    ends = np.where(
        (verts[:, 0] < 1e-12) | (verts[:, 0] > length - 1e-12)
    )[0].astype(np.int64)
    attachments = AttachmentSet(
        stiffness=anchor_stiffness,
        garment_vertices=ends,
        garment_targets=posed[None, ends],
    )
    return _finish_scene(garment, ["stretch"], posed[None], [clutch], attachments)


def tiny_strip_scene(stretch=0.05, anchor_stiffness=1e6):
    """12-element strip (6x1 grid) for exhaustive design enumeration.

    A short clutch sits over the middle of the strip, so reinforcement
    placement trades off between bridging to the pinned ends (good when
    ON) and stiffening the free span (bad when OFF).
    """
    length, width = 0.12, 0.02
    verts, tris = grid_strip(length, width, 6, 1)
    garment = TriMesh(verts, tris)
    posed = verts.copy()
    posed[:, 0] *= 1.0 + stretch

    start = locate_surface_point(garment, [0.035, width * 0.55, 0.0])
    spec = ClutchSpec(
        start=start,
        direction=bary_direction(garment, start.element, [1.0, 0.0, 0.0]),
        length=0.05,
        width=0.008,
    )
    clutch = generate_clutch_mesh(garment, spec)

    ends = np.where(
        (verts[:, 0] < 1e-12) | (verts[:, 0] > length - 1e-12)
    )[0].astype(np.int64)
    attachments = AttachmentSet(
        stiffness=anchor_stiffness,
        garment_vertices=ends,
        garment_targets=posed[None, ends],
    )
    return _finish_scene(garment, ["stretch"], posed[None], [clutch], attachments)


def sleeve_scene(
    n_around=12,
    n_along=16,
    motions=("flex", "extend"),
    sdf_resolution=48,
    with_sdf=True,
    flex_angle=12.0,
    extend_angle=-12.0,
    ramp=0.16,
    stretch=0.06,
    ease=0.03,
    anchor_both_cuffs=True,
    contact_stiffness=1e6,
):
    """Cylindrical sleeve over a capsule arm bending at the elbow.

    Motions: "flex" and "extend" rotate the forearm about the elbow
    hinge (degrees, ramped over ``ramp`` meters so the arm stays smooth).
    The sleeve is worn like a compression sleeve: its rest radius is
    ``ease`` smaller than the arm (hoop tension) and it is donned with an
    axial tug of ``stretch``, so the membrane is taut in both principal
    directions in every pose and presses onto the arm everywhere. Taut
    membranes have full-rank element stiffness (no wrinkle-slack null
    modes), which keeps every equilibrium solve well conditioned, and the
    body contact carries real load, so reinforcement layout has
    meaningful load paths between the cuffs and across the elbow.
    """
    arm_r, arm_len = 0.035, 0.36
    body_v, body_t = capsule(arm_r, arm_len, n_theta=18, n_seg=10, n_cap=6)
    rest_body = TriMesh(body_v, body_t)

    sleeve_r = arm_r * (1.0 - ease)  # negative ease: tight fit
    worn_r = arm_r + 1.1 * 2e-3  # donned just outside the contact margin
    verts, tris = tube(sleeve_r, -0.14, 0.14, n_around, n_along)
    garment = TriMesh(verts, tris)

    angles = {"flex": np.deg2rad(flex_angle), "extend": np.deg2rad(extend_angle)}
    labels = list(motions)
    tugged = verts.copy()
    tugged[:, 0] *= 1.0 + stretch
    tugged[:, 1:] *= worn_r / sleeve_r
    pose_bodies, pose_garment, sdfs = [], [], []
    for m in labels:
        if m not in angles:
            raise ValueError(f"unknown sleeve motion: {m}")
        a = angles[m]
        pose_bodies.append(bend_points(body_v, 0.0, a, ramp))
        pose_garment.append(bend_points(tugged, 0.0, a, ramp))
        if with_sdf:
            posed = TriMesh(pose_bodies[-1], body_t)
            sdfs.append(build_sdf(posed, resolution=sdf_resolution))
        else:
            sdfs.append(None)
    poses = PoseSet(rest_body, pose_bodies, labels, sdfs=list(sdfs))

    # mirrored clutch pair across the elbow: the -y clutch is stretched in
    # flexion, the +y clutch in extension, so the two motions load the
    # sleeve symmetrically and each clutch owns one bending direction
    # the start x must not land exactly on a mesh ring line (it does at
    # -0.105 for n_along=16): a start on an element edge gives degenerate
    # endpoint couplings that stall the equilibrium solver
    clutches = []
    for side in (-1.0, 1.0):
        start = locate_surface_point(garment, [-0.104, side * sleeve_r, 0.001])
        spec = ClutchSpec(
            start=start,
            direction=bary_direction(garment, start.element, [1.0, 0.0, 0.0]),
            length=0.21,
            width=0.012,
        )
        clutches.append(generate_clutch_mesh(garment, spec))

    if anchor_both_cuffs:
        cuff_mask = (np.abs(verts[:, 0] + 0.14) < 1e-9) | (
            np.abs(verts[:, 0] - 0.14) < 1e-9
        )
    else:
        cuff_mask = np.abs(verts[:, 0] + 0.14) < 1e-9
    cuffs = np.where(cuff_mask)[0].astype(np.int64)
    targets = np.stack([pg[cuffs] for pg in pose_garment])
    # anchors must out-muscle the reinforced membrane's axial tension or
    # the donning tug relaxes through the cuffs
    attachments = AttachmentSet(
        stiffness=1e6, garment_vertices=cuffs, garment_targets=targets
    )
    return _finish_scene(
        garment,
        labels,
        np.stack(pose_garment),
        clutches,
        attachments,
        sdfs=list(sdfs),
        poses=poses,
        contact_stiffness=contact_stiffness,
    )


def shirt_scene(
    n_around=12,
    n_along=14,
    sdf_resolution=48,
    with_sdf=True,
    bow_angle=7.0,
    lean_angle=6.0,
    ramp=0.20,
    stretch=0.08,
    ease=0.03,
    contact_stiffness=1e6,
):
    """Half-cylinder shirt over a capsule torso with two bending motions.

    The torso bends forward ("bow") and sideways ("lean"); the shirt is a
    half shell anchored along its full boundary (hem, collar, and side
    seams), with one clutch running down the back midline. As in the
    sleeve, the shell is worn tight: its rest radius is ``ease`` smaller
    than the torso and donning adds an axial tug of ``stretch``, so the
    membrane is taut in both principal directions in every pose and the
    solves stay free of wrinkle-slack null modes. The bend angles are
    chosen so the bending fiber strain at the shell radius stays below
    the pre-stretch.
    """
    torso_r, torso_len = 0.09, 0.4
    body_v, body_t = capsule(torso_r, torso_len, n_theta=18, n_seg=10, n_cap=6)
    rest_body = TriMesh(body_v, body_t)

    shell_r = torso_r * (1.0 - ease)  # negative ease: tight fit
    worn_r = torso_r + 1.1 * 2e-3  # donned just outside the contact margin
    verts, tris = tube(
        shell_r, -0.16, 0.16, n_around, n_along, arc=np.pi, arc_start=0.5 * np.pi
    )
    garment = TriMesh(verts, tris)

    motions = {"bow": ("y", np.deg2rad(bow_angle)), "lean": ("z", np.deg2rad(lean_angle))}
    labels = list(motions)
    tugged = verts.copy()
    tugged[:, 0] *= 1.0 + stretch
    tugged[:, 1:] *= worn_r / shell_r
    pose_bodies, pose_garment, sdfs = [], [], []
    for m in labels:
        axis, a = motions[m]
        pose_bodies.append(bend_points(body_v, 0.0, a, ramp, axis=axis))
        pose_garment.append(bend_points(tugged, 0.0, a, ramp, axis=axis))
        if with_sdf:
            posed = TriMesh(pose_bodies[-1], body_t)
            sdfs.append(build_sdf(posed, resolution=sdf_resolution))
        else:
            sdfs.append(None)
    poses = PoseSet(rest_body, pose_bodies, labels, sdfs=list(sdfs))

    start = locate_surface_point(garment, [-0.12, -shell_r, 0.001])
    spec = ClutchSpec(
        start=start,
        direction=bary_direction(garment, start.element, [1.0, 0.0, 0.0]),
        length=0.24,
        width=0.014,
    )
    clutch = generate_clutch_mesh(garment, spec)

    # the open shell holds its hoop tension through its boundary: anchor
    # hem, collar, and both side seams at their posed positions
    rims = garment.boundary_vertices()
    targets = np.stack([pg[rims] for pg in pose_garment])
    attachments = AttachmentSet(
        stiffness=1e6, garment_vertices=rims, garment_targets=targets
    )
    return _finish_scene(
        garment,
        labels,
        np.stack(pose_garment),
        [clutch],
        attachments,
        sdfs=list(sdfs),
        poses=poses,
        contact_stiffness=contact_stiffness,
    )
