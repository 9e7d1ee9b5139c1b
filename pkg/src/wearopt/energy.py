"""Total-system energy and gradient assembly.

The free variables of a quasi-static state are the garment nodal positions
x and the per-clutch nodal positions q; the body is a rigid constant per
pose. The total energy is

    E_garment(x, d) + E_body(x) + E_attach(x)
    + E_clutches(q, gamma) + E_body(q) + E_attach(q, x)

with a relaxed (tension-field) membrane for the garment, the full membrane
for clutches, a one-sided quadratic body penalty with margin, and quadratic
attachment springs. Clutch endpoints couple to barycentric garment points,
so their attachment forces act back on the garment.
"""

from dataclasses import dataclass, field

import numpy as np

from .materials import (
    MaterialParams,
    clutch_modulus,
    interpolate_garment_modulus,
    membrane_energy_density,
    NumericError,
)


@dataclass
class ClutchCoupling:
    """Six clutch endpoint vertices tied to garment surface points."""

    vertex_ids: np.ndarray  # (6,) indices into the clutch mesh
    elements: np.ndarray  # (6,) garment elements
    weights: np.ndarray  # (6, 3) barycentric weights per element vertex


@dataclass
class AttachmentSet:
    """Quadratic couplings anchoring the garment and the clutch endpoints."""

    stiffness: float = 1e4
    garment_vertices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    garment_targets: np.ndarray = field(default_factory=lambda: np.zeros((1, 0, 3)))  # (K, Na, 3)
    clutch_couplings: list = field(default_factory=list)

    def validate(self, scene):
        if self.stiffness <= 0.0:
            raise ValueError("attachment stiffness must be positive")
        n = scene.garment.num_vertices
        if self.garment_vertices.size and (
            self.garment_vertices.min() < 0 or self.garment_vertices.max() >= n
        ):
            raise ValueError("garment anchor vertex out of range")
        if len(self.clutch_couplings) != len(scene.clutches):
            raise ValueError("need exactly one coupling set per clutch")
        for c in self.clutch_couplings:
            if len(c.vertex_ids) != 6:
                raise ValueError("each clutch needs exactly 6 endpoint pairs")


def coupling_from_clutch(clutch):
    """Build the endpoint coupling for a generated clutch mesh."""
    pts = clutch.endpoint_surface_points()
    elements = np.array([p.element for p in pts], dtype=np.int64)
    weights = np.array([[p.w, p.u, p.v] for p in pts])
    return ClutchCoupling(
        vertex_ids=clutch.endpoint_vertex_ids.copy(),
        elements=elements,
        weights=weights,
    )


@dataclass
class Scene:
    """Everything a quasi-static solve needs, for all poses."""

    garment: "TriMesh"
    pose_labels: list
    garment_pose_positions: np.ndarray  # (K, n, 3) initialization per pose
    clutches: list = field(default_factory=list)
    attachments: AttachmentSet = field(default_factory=AttachmentSet)
    materials: MaterialParams = field(default_factory=MaterialParams)
    sdfs: list = None  # per pose, None entries allowed
    contact_margin: float = 2e-3
    contact_stiffness: float = 1e4
    poses: object = None  # optional PoseSet (body meshes)
    frozen_elements: np.ndarray = None  # bool mask, design locked to 1

    def __post_init__(self):
        if self.sdfs is None:
            self.sdfs = [None] * self.num_poses
        if self.frozen_elements is None:
            self.frozen_elements = np.zeros(self.garment.num_elements, dtype=bool)
        self.materials.validate()

    @property
    def num_poses(self):
        return len(self.pose_labels)

    @property
    def num_clutches(self):
        return len(self.clutches)

    def dof_layout(self):
        sizes = [self.garment.num_vertices] + [c.num_vertices for c in self.clutches]
        return sizes

    def pack(self, x, qs):
        return np.concatenate([np.ravel(x)] + [np.ravel(q) for q in qs])

    def unpack(self, z):
        sizes = self.dof_layout()
        out = []
        off = 0
        for s in sizes:
            out.append(z[off : off + 3 * s].reshape(s, 3))
            off += 3 * s
        return out[0], out[1:]

    def initial_positions(self, pose):
        """Skinned initialization: garment at its posed positions, clutch
        vertices re-evaluated from the posed garment."""
        x0 = self.garment_pose_positions[pose].copy()
        qs = [c.positions_for(self.garment, x0) for c in self.clutches]
        return x0, qs


@dataclass
class SceneState:
    x: np.ndarray
    q: list
    pose: int
    gamma: np.ndarray
    design: np.ndarray


@dataclass
class EnergyBreakdown:
    E_garment: float = 0.0
    E_body_garment: float = 0.0
    E_attach_garment: float = 0.0
    E_clutches: float = 0.0
    E_body_clutch: float = 0.0
    E_attach_clutch: float = 0.0
    gradient_norm: float = 0.0
    garment_densities: np.ndarray = None  # per-element W^e (J/m^3)

    @property
    def total(self):
        return (
            self.E_garment
            + self.E_body_garment
            + self.E_attach_garment
            + self.E_clutches
            + self.E_body_clutch
            + self.E_attach_clutch
        )


def _membrane_term(mesh, positions, Y, nu, relaxed):
    """Membrane energy of one mesh: returns (E, per-element W, grad)."""
    F = mesh.deformation_gradients(positions)
    W1, dW1 = membrane_energy_density(F, 1.0, nu, relaxed=relaxed)
    Y = np.broadcast_to(np.asarray(Y, dtype=float), (mesh.num_elements,))
    W = Y * W1
    coeff = mesh.thickness * mesh.rest_areas * Y
    E = float(np.dot(coeff, W1))

    # dE/dDs = coeff * dW/dF * Dm^-T, scattered to the vertices
    G = coeff[:, None, None] * (dW1 @ np.swapaxes(mesh.rest_edge_matrix_inv, 1, 2))
    grad = np.zeros_like(positions)
    t = mesh.triangles
    np.add.at(grad, t[:, 1], G[:, :, 0])
    np.add.at(grad, t[:, 2], G[:, :, 1])
    np.add.at(grad, t[:, 0], -(G[:, :, 0] + G[:, :, 1]))
    return E, W, grad


def garment_energy(scene, x, d):
    """Garment membrane energy, per-element densities, and gradient."""
    Y = interpolate_garment_modulus(d, scene.materials)
    return _membrane_term(scene.garment, x, Y, scene.materials.nu, relaxed=True)


def body_penalty_energy(sdf, points, margin, stiffness):
    """One-sided quadratic penalty 1/2 k max(0, margin - s)^2 per vertex."""
    if sdf is None:
        return 0.0, np.zeros_like(points)
    s, gs = sdf.query(points)
    pen = np.maximum(0.0, margin - s)
    E = 0.5 * stiffness * float(np.dot(pen, pen))
    grad = -stiffness * pen[:, None] * gs
    return E, grad


def attachment_energy(scene, pose, x, qs):
    """Anchor springs (garment->body) and endpoint springs (clutch->garment).

    Returns (E_garment_side, E_clutch_side, grad_x, grad_qs).
    """
    att = scene.attachments
    k = att.stiffness
    grad_x = np.zeros_like(x)
    grad_qs = [np.zeros_like(q) for q in qs]

    E_g = 0.0
    if att.garment_vertices.size:
        targets = att.garment_targets[pose]
        diff = x[att.garment_vertices] - targets
        E_g = 0.5 * k * float(np.sum(diff * diff))
        np.add.at(grad_x, att.garment_vertices, k * diff)

    E_c = 0.0
    tris = scene.garment.triangles
    for ci, coup in enumerate(att.clutch_couplings):
        verts = tris[coup.elements]  # (6, 3)
        xc = np.einsum("pj,pjd->pd", coup.weights, x[verts])
        diff = qs[ci][coup.vertex_ids] - xc
        E_c += 0.5 * k * float(np.sum(diff * diff))
        np.add.at(grad_qs[ci], coup.vertex_ids, k * diff)
        np.add.at(grad_x, verts, -k * coup.weights[:, :, None] * diff[:, None, :])
    return E_g, E_c, grad_x, grad_qs


def _membrane_hessian_blocks(mesh, positions, Y, nu, relaxed, h=1e-5, project=True):
    """Per-element 9x9 membrane Hessian blocks, projected to PSD.

    The 6x6 Hessian of the energy density w.r.t. the deformation gradient
    is taken by central differences of the analytic stress (batched over
    elements), eigenvalue-clamped to be positive semi-definite, then
    chained through the constant element map from vertex positions to the
    deformation gradient.
    """
    n = mesh.num_elements
    F = mesh.deformation_gradients(positions)
    # one batched stress call covering +/- h along all 6 F components
    Fpert = np.broadcast_to(F, (12, n, 3, 2)).copy()
    col = 0
    for i in range(3):
        for d in range(2):
            Fpert[2 * col, :, i, d] += h
            Fpert[2 * col + 1, :, i, d] -= h
            col += 1
    _, dall = membrane_energy_density(
        Fpert.reshape(12 * n, 3, 2), 1.0, nu, relaxed=relaxed
    )
    dall = dall.reshape(12, n, 6)
    HF = np.transpose((dall[0::2] - dall[1::2]) / (2.0 * h), (1, 2, 0))
    HF = 0.5 * (HF + np.swapaxes(HF, 1, 2))
    if project:
        w, V = np.linalg.eigh(HF)
        w = np.maximum(w, 0.0)
        HF = np.einsum("eij,ej,ekj->eik", V, w, V)
    HF = HF.reshape(n, 3, 2, 3, 2)

    # dF[i,d]/dx[v,i] for vertex v of the element
    dm_inv = mesh.rest_edge_matrix_inv
    C = np.empty((n, 3, 2))
    C[:, 1, :] = dm_inv[:, 0, :]
    C[:, 2, :] = dm_inv[:, 1, :]
    C[:, 0, :] = -(dm_inv[:, 0, :] + dm_inv[:, 1, :])

    Y = np.broadcast_to(np.asarray(Y, dtype=float), (n,))
    coeff = mesh.thickness * mesh.rest_areas * Y
    Hx = np.einsum("zvd,zjdkc,zwc->zvjwk", C, HF, C)
    return coeff[:, None, None, None, None] * Hx


def _block_coo(vertex_ids, blocks, rows, cols, vals):
    """Scatter (n, 3, 3, 3, 3) vertex-blocks into COO triplet lists."""
    n = blocks.shape[0]
    dof = (3 * vertex_ids[:, :, None] + np.arange(3)).reshape(n, 9)
    rows.append(np.repeat(dof, 9, axis=1).ravel())
    cols.append(np.tile(dof, (1, 9)).ravel())
    vals.append(blocks.reshape(n, 81).ravel())


def _contact_coo(sdf, points, margin, stiffness, offset, rows, cols, vals):
    """Gauss-Newton contact blocks k * (grad s)(grad s)^T on active vertices."""
    if sdf is None:
        return
    s, gs = sdf.query(points)
    active = np.nonzero(s < margin)[0]
    if active.size == 0:
        return
    g = gs[active]
    blocks = stiffness * g[:, :, None] * g[:, None, :]
    dof = 3 * (offset + active)[:, None] + np.arange(3)
    rows.append(np.repeat(dof, 3, axis=1).ravel())
    cols.append(np.tile(dof, (1, 3)).ravel())
    vals.append(blocks.reshape(active.size, 9).ravel())


def _spring_hessian_triplets(scene, offsets):
    """COO triplets for the anchor and coupling springs.

    These are exact constant Hessian blocks (the springs are quadratic),
    so they are built once and cached on the scene; the cache key tracks
    the coupling list identity so interactive clutch edits invalidate it.
    """
    att = scene.attachments
    key = (int(offsets[-1]), id(att.clutch_couplings), len(att.clutch_couplings))
    cached = getattr(scene, "_spring_triplet_cache", None)
    if cached is not None and cached[0] == key:
        return cached[1]

    rows, cols, vals = [], [], []
    k = att.stiffness
    if att.garment_vertices.size:
        dof = (3 * att.garment_vertices[:, None] + np.arange(3)).ravel()
        rows.append(dof)
        cols.append(dof)
        vals.append(np.full(dof.size, float(k)))

    tris = scene.garment.triangles
    eye3 = np.eye(3)
    for ci, coup in enumerate(att.clutch_couplings):
        # springs between clutch vertices q and barycentric garment points
        ids = np.concatenate(
            [offsets[ci + 1] + coup.vertex_ids[:, None], tris[coup.elements]], axis=1
        )
        wvec = np.concatenate(
            [np.ones((len(ids), 1)), -coup.weights], axis=1
        )
        dof = (3 * ids[:, :, None] + np.arange(3)).reshape(len(ids), 12)
        ww = wvec[:, :, None] * wvec[:, None, :]
        blocks = k * np.einsum("pab,ij->paibj", ww, eye3).reshape(len(ids), 12, 12)
        rows.append(np.repeat(dof, 12, axis=1).ravel())
        cols.append(np.tile(dof, (1, 12)).ravel())
        vals.append(blocks.ravel())

    if rows:
        out = (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
    else:
        empty = np.zeros(0)
        out = (empty.astype(np.int64), empty.astype(np.int64), empty)
    scene._spring_triplet_cache = (key, out)
    return out


def total_hessian(scene, state, project=True):
    """Sparse total-energy Hessian for Newton solves.

    With ``project`` (the default) membrane blocks are eigenvalue-clamped
    to be positive semi-definite, which guarantees descent directions far
    from equilibrium; without it the raw indefinite blocks are kept, which
    restores quadratic convergence near equilibrium where per-element
    clamping over-stiffens wrinkled regions. The contact term keeps only
    its Gauss-Newton part; spring terms are exact (and already PSD).
    """
    from scipy import sparse

    mat = scene.materials
    x, qs, pose = state.x, state.q, state.pose
    sdf = scene.sdfs[pose]
    sizes = scene.dof_layout()
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    N = 3 * offsets[-1]
    rows, cols, vals = [], [], []

    Yg = interpolate_garment_modulus(state.design, mat)
    Hg = _membrane_hessian_blocks(
        scene.garment, x, Yg, mat.nu, relaxed=True, project=project
    )
    _block_coo(scene.garment.triangles, Hg, rows, cols, vals)
    _contact_coo(
        sdf, x, scene.contact_margin, scene.contact_stiffness, 0, rows, cols, vals
    )

    for ci, clutch in enumerate(scene.clutches):
        Yc = clutch_modulus(state.gamma[ci], mat)
        Hc = _membrane_hessian_blocks(
            clutch.mesh, qs[ci], Yc, mat.nu, relaxed=False, project=project
        )
        _block_coo(offsets[ci + 1] + clutch.mesh.triangles, Hc, rows, cols, vals)
        _contact_coo(
            sdf,
            qs[ci],
            scene.contact_margin,
            scene.contact_stiffness,
            offsets[ci + 1],
            rows,
            cols,
            vals,
        )

    r, c, v = _spring_hessian_triplets(scene, offsets)
    if r.size:
        rows.append(r)
        cols.append(c)
        vals.append(v)

    H = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N),
    )
    return H.tocsc()


def total_energy_and_gradient(scene, state):
    """EnergyBreakdown and the gradient stacked over [x, q_0, q_1, ...]."""
    mat = scene.materials
    x, qs, pose = state.x, state.q, state.pose
    sdf = scene.sdfs[pose]

    E_gar, W_gar, grad_x = garment_energy(scene, x, state.design)
    E_body_g, g_body = body_penalty_energy(
        sdf, x, scene.contact_margin, scene.contact_stiffness
    )
    grad_x = grad_x + g_body

    grad_qs = []
    E_clutch = 0.0
    E_body_c = 0.0
    for ci, clutch in enumerate(scene.clutches):
        Yc = clutch_modulus(state.gamma[ci], mat)
        Ec, _, gq = _membrane_term(clutch.mesh, qs[ci], Yc, mat.nu, relaxed=False)
        Eb, gb = body_penalty_energy(
            sdf, qs[ci], scene.contact_margin, scene.contact_stiffness
        )
        E_clutch += Ec
        E_body_c += Eb
        grad_qs.append(gq + gb)

    E_att_g, E_att_c, ga_x, ga_qs = attachment_energy(scene, pose, x, qs)
    grad_x = grad_x + ga_x
    grad_qs = [g + ga for g, ga in zip(grad_qs, ga_qs)]

    grad = scene.pack(grad_x, grad_qs)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in energy assembly")

    breakdown = EnergyBreakdown(
        E_garment=E_gar,
        E_body_garment=E_body_g,
        E_attach_garment=E_att_g,
        E_clutches=E_clutch,
        E_body_clutch=E_body_c,
        E_attach_clutch=E_att_c,
        gradient_norm=float(np.linalg.norm(grad)),
        garment_densities=W_gar,
    )
    return breakdown, grad
