"""Local HTTP service for the interactive designer front end.

Read endpoints may run concurrently; scene mutations (clutch edits,
painting, activation) serialize through one lock, and at most one
optimization job runs at a time (started in a background thread, polled
via immutable progress records).

Error contract: 400 malformed payloads, 404 missing resources, 409 job
conflicts, 422 coverage-budget violations.
"""

import threading

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .config import ClutchConfig, build_scene, load_config
from .design import DesignVector, coverage_of, optimize
from .energy import coupling_from_clutch
from .equilibrium import solve_equilibrium
from .paths import generate_clutch_mesh


class _Payload(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ClutchEdit(_Payload):
    action: str = Field(pattern="^(create|update|delete)$")
    index: int | None = None
    spec: ClutchConfig | None = None


class PaintRequest(_Payload):
    elements: list[int]
    value: int = Field(ge=0, le=1)


class SimulateRequest(_Payload):
    pose: int = Field(ge=0)
    mode: str = Field(pattern="^(ON|OFF|CURRENT)$", default="ON")


class OptimizeRequest(_Payload):
    budget: float | None = Field(default=None, gt=0.0, le=1.0)


class ActivationRequest(_Payload):
    gamma: list[float]


def _mesh_json(positions, triangles):
    return {
        "positions": np.asarray(positions).tolist(),
        "triangles": np.asarray(triangles).tolist(),
    }


class DesignService:
    """Mutable server state: the scene, the working design, job status."""

    def __init__(self, config):
        self.config = config
        self.scene = build_scene(config)
        self.lock = threading.Lock()
        n = self.scene.garment.num_elements
        self.design = DesignVector(np.ones(n), self.scene.frozen_elements.copy())
        self.gamma = np.ones(self.scene.num_clutches)
        self.job = None  # running optimization thread
        self.progress = []
        self.snapshots = []
        self.job_error = None

    # -- scene mutations ----------------------------------------------------

    def rebuild_clutches(self, specs):
        """Regenerate clutch meshes/couplings after an edit."""
        scene = self.scene
        clutches = [generate_clutch_mesh(scene.garment, s) for s in specs]
        couplings = [coupling_from_clutch(c) for c in clutches]
        scene.clutches = clutches
        scene.attachments.clutch_couplings = couplings
        frozen = np.zeros(scene.garment.num_elements, dtype=bool)
        for c in couplings:
            frozen[c.elements] = True
        scene.frozen_elements = frozen
        vals = np.maximum(self.design.values, frozen.astype(float))
        self.design = DesignVector(vals, frozen)
        self.gamma = np.ones(scene.num_clutches)

    def paint(self, elements, value):
        scene = self.scene
        m = scene.garment.num_elements
        ids = np.asarray(elements, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= m):
            raise IndexError("element id out of range")
        vals = self.design.values.copy()
        vals[ids] = float(value)
        vals[scene.frozen_elements] = 1.0
        attempted = coverage_of(
            DesignVector(vals, scene.frozen_elements.copy()),
            scene.garment.rest_areas,
        )
        current = coverage_of(self.design, scene.garment.rest_areas)
        if attempted > self.config.coverage_budget + 1e-12:
            return current, attempted, False
        self.design = DesignVector(vals, scene.frozen_elements.copy())
        return attempted, attempted, True

    # -- optimization job ---------------------------------------------------

    def start_job(self, budget):
        beso = self.config.optimizer.to_config()
        if budget is not None:
            beso.target_coverage = budget
        self.progress = []
        self.snapshots = []
        self.job_error = None

        def record(rec, design):
            self.snapshots.append(design.values.copy())
            self.progress.append(rec)

        def run():
            try:
                result = optimize(
                    self.scene,
                    beso,
                    solve_cfg=self.config.solver.to_config(),
                    callback=record,
                )
                self.snapshots = result.snapshots
                with self.lock:
                    self.design = result.design
            except Exception as e:  # surfaced via /optimize/progress
                self.job_error = str(e)

        self.job = threading.Thread(target=run, daemon=True)
        self.job.start()

    @property
    def job_running(self):
        return self.job is not None and self.job.is_alive()


def create_app(config_path):
    config = load_config(config_path)
    svc = DesignService(config)
    app = FastAPI(title="wearopt design service")
    app.state.service = svc

    @app.exception_handler(RequestValidationError)
    async def bad_payload(request: Request, exc):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.get("/scene")
    def get_scene():
        scene = svc.scene
        with svc.lock:
            design = svc.design.values.tolist()
            gamma = svc.gamma.tolist()
        return {
            "garment": _mesh_json(scene.garment.rest_positions, scene.garment.triangles),
            "pose_labels": list(scene.pose_labels),
            "clutches": [
                {
                    "spec": ClutchConfig.from_spec(c.spec).model_dump(),
                    "mesh": _mesh_json(c.mesh.rest_positions, c.mesh.triangles),
                }
                for c in scene.clutches
            ],
            "design": design,
            "activation": gamma,
            "coverage": coverage_of(svc.design, scene.garment.rest_areas),
            "coverage_budget": config.coverage_budget,
        }

    @app.post("/clutch")
    def edit_clutch(edit: ClutchEdit):
        if svc.job_running:
            return JSONResponse(status_code=409, content={"detail": "optimization running"})
        with svc.lock:
            specs = [c.spec for c in svc.scene.clutches]
            if edit.action == "create":
                if edit.spec is None:
                    return JSONResponse(status_code=400, content={"detail": "spec required"})
                specs.append(edit.spec.to_spec())
            elif edit.action == "update":
                if edit.spec is None or edit.index is None or not (0 <= edit.index < len(specs)):
                    return JSONResponse(status_code=400, content={"detail": "bad index or spec"})
                specs[edit.index] = edit.spec.to_spec()
            else:  # delete
                if edit.index is None or not (0 <= edit.index < len(specs)):
                    return JSONResponse(status_code=400, content={"detail": "bad index"})
                specs.pop(edit.index)
            try:
                svc.rebuild_clutches(specs)
            except (ValueError, IndexError) as e:
                return JSONResponse(status_code=400, content={"detail": str(e)})
            meshes = [
                _mesh_json(c.mesh.rest_positions, c.mesh.triangles)
                for c in svc.scene.clutches
            ]
        return {"clutches": meshes}

    @app.post("/design/paint")
    def paint(req: PaintRequest):
        if svc.job_running:
            return JSONResponse(status_code=409, content={"detail": "optimization running"})
        with svc.lock:
            try:
                current, attempted, ok = svc.paint(req.elements, req.value)
            except IndexError as e:
                return JSONResponse(status_code=400, content={"detail": str(e)})
        if not ok:
            return JSONResponse(
                status_code=422,
                content={
                    "detail": "coverage budget exceeded",
                    "budget": config.coverage_budget,
                    "current_coverage": current,
                    "attempted_coverage": attempted,
                },
            )
        return {"coverage": current}

    @app.post("/simulate")
    def simulate(req: SimulateRequest):
        scene = svc.scene
        if req.pose >= scene.num_poses:
            return JSONResponse(status_code=400, content={"detail": "pose out of range"})
        with svc.lock:
            design = svc.design.values.copy()
            if req.mode == "ON":
                gamma = np.ones(scene.num_clutches)
            elif req.mode == "OFF":
                gamma = np.zeros(scene.num_clutches)
            else:
                gamma = svc.gamma.copy()
        state = solve_equilibrium(
            scene, req.pose, gamma, design, cfg=config.solver.to_config()
        )
        bd = state.breakdown
        return {
            "pose": scene.pose_labels[req.pose],
            "mode": req.mode,
            "converged": state.converged,
            "energy_total": bd.total,
            "energy_garment": bd.E_garment,
            "densities": np.asarray(bd.garment_densities).tolist(),
            "garment_positions": state.x.tolist(),
            "clutch_positions": [q.tolist() for q in state.q],
        }

    @app.post("/optimize")
    def start_optimize(req: OptimizeRequest):
        if svc.job_running:
            return JSONResponse(status_code=409, content={"detail": "optimization already running"})
        svc.start_job(req.budget)
        return {"started": True}

    @app.get("/optimize/progress")
    def job_progress():
        records = [
            {
                "iteration": p.iteration,
                "coverage": p.coverage,
                "rho_on": list(p.rho_on),
                "rho_off": list(p.rho_off),
                "objective": p.objective,
                "snapshot_id": p.snapshot_id,
                "solver_converged": p.solver_converged,
            }
            for p in list(svc.progress)
        ]
        return {
            "running": svc.job_running,
            "error": svc.job_error,
            "records": records,
        }

    @app.get("/optimize/snapshot/{i}")
    def job_snapshot(i: int):
        snaps = svc.snapshots
        if not (0 <= i < len(snaps)):
            return JSONResponse(status_code=404, content={"detail": f"no snapshot {i}"})
        return {"iteration": i, "design": np.asarray(snaps[i]).tolist()}

    @app.post("/activation")
    def set_activation(req: ActivationRequest):
        if len(req.gamma) != svc.scene.num_clutches:
            return JSONResponse(
                status_code=400,
                content={"detail": f"need {svc.scene.num_clutches} activation values"},
            )
        if any(not (0.0 <= g <= 1.0) for g in req.gamma):
            return JSONResponse(status_code=400, content={"detail": "activation must lie in [0, 1]"})
        with svc.lock:
            svc.gamma = np.asarray(req.gamma, dtype=float)
        return {"activation": svc.gamma.tolist()}

    return app
