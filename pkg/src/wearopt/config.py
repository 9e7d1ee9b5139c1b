"""Scene configuration: a schema-versioned JSON file naming meshes on disk.

A scene configuration references a rest garment mesh, one body mesh and
one posed garment mesh per motion, clutch placements, anchors, material
constants, and solver/optimizer settings. ``build_scene`` turns a loaded
configuration into a runtime :class:`~wearopt.energy.Scene`;
``write_scene_files`` does the reverse for procedurally built scenes so
they can be shipped as self-contained directories.
"""

import json
import os

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .body import PoseSet, SignedDistanceField, build_sdf
from .design import BesoConfig
from .energy import AttachmentSet, Scene, coupling_from_clutch
from .equilibrium import SolveConfig
from .materials import MaterialParams
from .mesh import TriMesh, load_obj, save_obj
from .paths import ClutchSpec, SurfacePoint, generate_clutch_mesh

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Raised for malformed or unresolvable scene configurations."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ClutchConfig(_Strict):
    """Clutch placement: start surface point, direction, length, width."""

    element: int = Field(ge=0)
    u: float
    v: float
    du: float
    dv: float
    length: float = Field(gt=0.0)
    width: float = Field(gt=0.0)

    def to_spec(self):
        return ClutchSpec(
            start=SurfacePoint(self.element, self.u, self.v),
            direction=(self.du, self.dv),
            length=self.length,
            width=self.width,
        )

    @classmethod
    def from_spec(cls, spec):
        return cls(
            element=spec.start.element,
            u=spec.start.u,
            v=spec.start.v,
            du=spec.direction[0],
            dv=spec.direction[1],
            length=spec.length,
            width=spec.width,
        )


class MaterialConfig(_Strict):
    youngs_cloth: float = 0.5e6
    youngs_reinforced: float = 0.5e9
    youngs_clutch: float = 3.0e9
    nu: float = 0.33
    penalization: float = 1.6
    thickness: float = 5e-4

    def to_params(self):
        return MaterialParams(
            Y_cloth=self.youngs_cloth,
            Y_reinforced=self.youngs_reinforced,
            Y_stiff=self.youngs_clutch,
            nu=self.nu,
            p=self.penalization,
            thickness=self.thickness,
        )


class SolverSettings(_Strict):
    tolerance: float = 1e-7
    max_iterations: int = 2000

    def to_config(self):
        return SolveConfig(
            tolerance=self.tolerance,
            max_iterations=self.max_iterations,
        )


class OptimizerSettings(_Strict):
    evolution_rate: float = 0.015
    admission_rate: float = 0.015
    target_coverage: float = 0.15
    filter_radius: float = 0.0
    history_window: int = 2
    max_iterations: int = 500

    def to_config(self):
        return BesoConfig(
            ER=self.evolution_rate,
            AR=self.admission_rate,
            target_coverage=self.target_coverage,
            filter_radius=self.filter_radius,
            history_window=self.history_window,
            max_iterations=self.max_iterations,
        )


class AnchorConfig(_Strict):
    """Garment vertices sprung to their posed positions."""

    stiffness: float = Field(default=1e4, gt=0.0)
    vertices: list[int] = Field(default_factory=list)


class MotionConfig(_Strict):
    label: str
    garment: str  # OBJ with the garment's posed initialization
    body: str | None = None  # posed body OBJ; None disables contact


class ContactConfig(_Strict):
    margin: float = 2e-3
    stiffness: float = 1e4
    sdf_resolution: int = 48
    sdf_cache: str | None = None


class SceneConfig(_Strict):
    schema_version: int = SCHEMA_VERSION
    garment: str  # rest garment OBJ
    rest_body: str | None = None
    motions: list[MotionConfig] = Field(min_length=1)
    clutches: list[ClutchConfig] = Field(default_factory=list)
    anchors: AnchorConfig = Field(default_factory=AnchorConfig)
    materials: MaterialConfig = Field(default_factory=MaterialConfig)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)
    contact: ContactConfig = Field(default_factory=ContactConfig)
    coverage_budget: float = Field(default=0.15, gt=0.0, le=1.0)
    output_dir: str = "runs"

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported schema version {v}; this build reads version {SCHEMA_VERSION}"
            )
        return v


def load_config(path):
    """Load and validate a scene configuration file.

    Relative mesh paths resolve against the configuration file's
    directory; every referenced file must exist.
    """
    path = os.path.abspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"configuration file not found: {path}")
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from e
    try:
        cfg = SceneConfig.model_validate(raw)
    except Exception as e:
        raise ConfigError(f"invalid scene configuration {path}: {e}") from e

    base = os.path.dirname(path)
    resolved = cfg.model_copy(deep=True)
    resolved.garment = _resolve(base, cfg.garment)
    if cfg.rest_body is not None:
        resolved.rest_body = _resolve(base, cfg.rest_body)
    for m in resolved.motions:
        m.garment = _resolve(base, m.garment)
        if m.body is not None:
            m.body = _resolve(base, m.body)
    if cfg.contact.sdf_cache is not None:
        resolved.contact.sdf_cache = os.path.normpath(
            os.path.join(base, cfg.contact.sdf_cache)
        )
    if not os.path.isabs(resolved.output_dir):
        resolved.output_dir = os.path.normpath(os.path.join(base, resolved.output_dir))
    return resolved


def _resolve(base, rel):
    p = rel if os.path.isabs(rel) else os.path.normpath(os.path.join(base, rel))
    if not os.path.exists(p):
        raise ConfigError(f"referenced mesh file not found: {p}")
    return p


def build_scene(cfg):
    """Construct the runtime Scene from a loaded (resolved) configuration."""
    g_verts, g_tris = load_obj(cfg.garment)
    materials = cfg.materials.to_params()
    garment = TriMesh(g_verts, g_tris, thickness=materials.thickness)

    pose_positions = []
    pose_bodies = []
    sdfs = []
    body_tris = None
    for m in cfg.motions:
        pv, pt = load_obj(m.garment)
        if pv.shape != g_verts.shape or not np.array_equal(pt, g_tris):
            raise ConfigError(
                f"posed garment {m.garment} does not match the rest garment topology"
            )
        pose_positions.append(pv)
        if m.body is not None:
            bv, bt = load_obj(m.body)
            if body_tris is not None and not np.array_equal(bt, body_tris):
                raise ConfigError("posed body meshes disagree on topology")
            body_tris = bt
            pose_bodies.append(bv)
            sdfs.append(_pose_sdf(cfg, m, bv, bt))
        else:
            pose_bodies.append(None)
            sdfs.append(None)

    clutches = [
        generate_clutch_mesh(garment, c.to_spec(), thickness=materials.thickness)
        for c in cfg.clutches
    ]

    n = garment.num_vertices
    anchor_ids = np.asarray(cfg.anchors.vertices, dtype=np.int64)
    if anchor_ids.size and (anchor_ids.min() < 0 or anchor_ids.max() >= n):
        raise ConfigError("anchor vertex index out of range")
    targets = np.stack([p[anchor_ids] for p in pose_positions])
    attachments = AttachmentSet(
        stiffness=cfg.anchors.stiffness,
        garment_vertices=anchor_ids,
        garment_targets=targets,
        clutch_couplings=[coupling_from_clutch(c) for c in clutches],
    )

    poses = None
    if body_tris is not None and cfg.rest_body is not None:
        rv, rt = load_obj(cfg.rest_body)
        rest_body = TriMesh(rv, rt)
        poses = PoseSet(
            rest_body,
            [b for b in pose_bodies if b is not None],
            [m.label for m in cfg.motions if m.body is not None],
            sdfs=[s for s in sdfs if s is not None],
        )

    scene = Scene(
        garment=garment,
        pose_labels=[m.label for m in cfg.motions],
        garment_pose_positions=np.stack(pose_positions),
        clutches=clutches,
        attachments=attachments,
        materials=materials,
        sdfs=sdfs,
        contact_margin=cfg.contact.margin,
        contact_stiffness=cfg.contact.stiffness,
        poses=poses,
    )
    frozen = np.zeros(garment.num_elements, dtype=bool)
    for c in attachments.clutch_couplings:
        frozen[c.elements] = True
    scene.frozen_elements = frozen
    attachments.validate(scene)
    return scene


def _pose_sdf(cfg, motion, body_verts, body_tris):
    cache_dir = cfg.contact.sdf_cache
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        cache = os.path.join(
            cache_dir, f"{motion.label}_{cfg.contact.sdf_resolution}.sdf"
        )
        if os.path.exists(cache):
            return SignedDistanceField.load(cache)
    sdf = build_sdf(
        TriMesh(body_verts, body_tris), resolution=cfg.contact.sdf_resolution
    )
    if cache_dir is not None:
        sdf.save(cache)
    return sdf


def write_scene_files(scene, out_dir, name, extra=None):
    """Write a Scene's meshes plus a configuration file into ``out_dir``.

    Used by the scene generator CLI so the procedural scenes become
    ordinary on-disk scenes. Returns the configuration path.
    """
    os.makedirs(out_dir, exist_ok=True)
    g = scene.garment
    save_obj(os.path.join(out_dir, "garment.obj"), g.rest_positions, g.triangles)

    motions = []
    for k, label in enumerate(scene.pose_labels):
        gpath = f"garment_{label}.obj"
        save_obj(
            os.path.join(out_dir, gpath),
            scene.garment_pose_positions[k],
            g.triangles,
        )
        body = None
        if scene.poses is not None:
            bm = scene.poses.rest_body
            body = f"body_{label}.obj"
            save_obj(
                os.path.join(out_dir, body),
                scene.poses.pose_bodies[k],
                bm.triangles,
            )
        motions.append(MotionConfig(label=label, garment=gpath, body=body))

    rest_body = None
    if scene.poses is not None:
        rest_body = "body_rest.obj"
        bm = scene.poses.rest_body
        save_obj(os.path.join(out_dir, rest_body), bm.rest_positions, bm.triangles)

    mat = scene.materials
    cfg = SceneConfig(
        garment="garment.obj",
        rest_body=rest_body,
        motions=motions,
        clutches=[ClutchConfig.from_spec(c.spec) for c in scene.clutches],
        anchors=AnchorConfig(
            stiffness=scene.attachments.stiffness,
            vertices=[int(i) for i in scene.attachments.garment_vertices],
        ),
        materials=MaterialConfig(
            youngs_cloth=mat.Y_cloth,
            youngs_reinforced=mat.Y_reinforced,
            youngs_clutch=mat.Y_stiff,
            nu=mat.nu,
            penalization=mat.p,
            thickness=mat.thickness,
        ),
        contact=ContactConfig(
            margin=scene.contact_margin, stiffness=scene.contact_stiffness
        ),
    )
    data = cfg.model_dump()
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(data.get(k), dict):
            data[k].update(v)
        else:
            data[k] = v
    cfg = SceneConfig.model_validate(data)
    path = os.path.join(out_dir, f"{name}.json")
    with open(path, "w") as f:
        json.dump(cfg.model_dump(), f, indent=2)
        f.write("\n")
    return path
