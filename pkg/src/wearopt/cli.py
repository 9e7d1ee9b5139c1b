"""Command-line interface: simulate, optimize, evaluate, serve, make-scene.

Exit codes: 0 success, 2 validation/configuration error, 3 solver
non-convergence (artifacts are still written, flagged as such).
"""

import json
import os
import sys

import click
import numpy as np

from . import scenes as scene_gen
from .bundle import (
    RunBundle,
    bundle_from_result,
    load_bundle,
    resume_arguments,
    save_bundle,
)
from .config import ConfigError, build_scene, load_config, write_scene_files
from .design import (
    DesignVector,
    evaluate_cross_matrix,
    optimize,
    structural_diagnostics,
)
from .equilibrium import solve_equilibrium
from .mesh import save_obj

EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3


def _load(config_path):
    try:
        cfg = load_config(config_path)
        scene = build_scene(cfg)
    except (ConfigError, ValueError) as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    return cfg, scene


def _read_design(path, scene):
    from .bundle import _read_vector

    try:
        values = _read_vector(path)
    except (OSError, ValueError) as e:
        click.echo(f"error: cannot read design {path}: {e}", err=True)
        sys.exit(EXIT_VALIDATION)
    if values.size != scene.garment.num_elements:
        click.echo(
            f"error: design {path} has {values.size} entries, garment has "
            f"{scene.garment.num_elements} elements",
            err=True,
        )
        sys.exit(EXIT_VALIDATION)
    return DesignVector(values, scene.frozen_elements.copy())


@click.group()
def main():
    """Active-garment design workbench."""


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--pose", default=0, show_default=True, help="Pose index to simulate.")
@click.option("--mode", type=click.Choice(["ON", "OFF"]), default="ON", show_default=True)
@click.option("--design", "design_path", type=click.Path(), default=None,
              help="Design vector file; defaults to fully dense.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Output directory; defaults to <output_dir>/simulate.")
def simulate(config_path, pose, mode, design_path, out_dir):
    """Solve one quasi-static state and write its artifacts."""
    cfg, scene = _load(config_path)
    if not (0 <= pose < scene.num_poses):
        click.echo(f"error: pose {pose} out of range (scene has {scene.num_poses})", err=True)
        sys.exit(EXIT_VALIDATION)
    design = (
        _read_design(design_path, scene)
        if design_path
        else DesignVector(np.ones(scene.garment.num_elements), scene.frozen_elements.copy())
    )
    gamma = (np.ones if mode == "ON" else np.zeros)(scene.num_clutches)
    state = solve_equilibrium(
        scene, pose, gamma, design.values, cfg=cfg.solver.to_config(), mode=mode
    )

    out = out_dir or os.path.join(cfg.output_dir, "simulate")
    os.makedirs(out, exist_ok=True)
    label = scene.pose_labels[pose]
    save_obj(os.path.join(out, f"garment_{label}_{mode}.obj"), state.x, scene.garment.triangles)
    for ci, clutch in enumerate(scene.clutches):
        save_obj(
            os.path.join(out, f"clutch{ci}_{label}_{mode}.obj"),
            state.q[ci],
            clutch.mesh.triangles,
        )
    bd = state.breakdown
    report = {
        "pose": label,
        "mode": mode,
        "converged": state.converged,
        "iterations": state.iterations,
        "residual": state.residual,
        "E_total": bd.total,
        "E_garment": bd.E_garment,
        "E_body_garment": bd.E_body_garment,
        "E_attach_garment": bd.E_attach_garment,
        "E_clutches": bd.E_clutches,
        "E_body_clutch": bd.E_body_clutch,
        "E_attach_clutch": bd.E_attach_clutch,
    }
    with open(os.path.join(out, f"report_{label}_{mode}.json"), "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    dens = np.asarray(bd.garment_densities)
    with open(os.path.join(out, f"density_{label}_{mode}.txt"), "w") as f:
        f.write(f"{dens.size}\n")
        for v in dens:
            f.write(f"{v:.17g}\n")
    click.echo(
        f"{label} {mode}: E_total={bd.total:.6e} converged={state.converged} "
        f"({state.iterations} iterations)"
    )
    if not state.converged:
        sys.exit(EXIT_NO_CONVERGENCE)


@main.command("optimize")
@click.argument("config_path", type=click.Path())
@click.option("--budget", type=float, default=None,
              help="Target coverage; overrides the configured value.")
@click.option("--run-id", default="run", show_default=True)
@click.option("--resume", "resume_path", type=click.Path(), default=None,
              help="Bundle directory of a truncated run to continue.")
def optimize_cmd(config_path, budget, run_id, resume_path):
    """Run the evolutionary reinforcement-layout optimization."""
    cfg, scene = _load(config_path)
    beso = cfg.optimizer.to_config()
    if budget is not None:
        if not (0.0 < budget <= 1.0):
            click.echo("error: --budget must lie in (0, 1]", err=True)
            sys.exit(EXIT_VALIDATION)
        beso.target_coverage = budget

    kwargs = {}
    if resume_path is not None:
        try:
            prior = load_bundle(resume_path)
        except (OSError, ValueError, KeyError) as e:
            click.echo(f"error: cannot resume from {resume_path}: {e}", err=True)
            sys.exit(EXIT_VALIDATION)
        kwargs = resume_arguments(prior, scene)
        run_id = prior.run_id

    result = optimize(scene, beso, solve_cfg=cfg.solver.to_config(), **kwargs)
    bundle = bundle_from_result(run_id, cfg.model_dump(), result, scene)
    out = save_bundle(bundle, cfg.output_dir)
    final = result.progress[-1]
    click.echo(
        f"run {run_id}: {len(result.progress)} iterations, coverage "
        f"{final.coverage:.4f}, objective {final.objective:.6e} -> {out}"
    )
    if any(not p.solver_converged for p in result.progress):
        click.echo("warning: some iterations contained non-converged solves", err=True)
        sys.exit(EXIT_NO_CONVERGENCE)


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--designs", "design_paths", multiple=True, required=True,
              type=click.Path(), help="Design vector files (repeatable).")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Cross-matrix CSV path; defaults to <output_dir>/cross_matrix.csv.")
def evaluate(config_path, design_paths, out_path):
    """Evaluate designs across motions: relative-energy-density matrix."""
    cfg, scene = _load(config_path)
    designs = [_read_design(p, scene) for p in design_paths]
    labels = [os.path.splitext(os.path.basename(p))[0] for p in design_paths]
    result = evaluate_cross_matrix(
        designs, scene, solve_cfg=cfg.solver.to_config(), design_labels=labels
    )

    out = out_path or os.path.join(cfg.output_dir, "cross_matrix.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    import csv as _csv

    with open(out, "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["design"] + list(result["column_labels"]))
        for name, row in zip(result["row_labels"], result["rho"]):
            w.writerow([name] + [f"{v:.17g}" for v in row])
    click.echo(f"cross matrix -> {out}")
    for name, design in zip(labels, designs):
        diag = structural_diagnostics(design, scene)
        click.echo(
            f"{name}: islands={diag['islands']} "
            f"unanchored_clutches={diag['unanchored_clutches']}"
        )
    if not np.all(result["converged"]):
        sys.exit(EXIT_NO_CONVERGENCE)


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--port", default=8787, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(config_path, port, host):
    """Run the local design service."""
    _load(config_path)  # fail fast on bad configs
    import uvicorn

    from .service import create_app

    app = create_app(config_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("make-scene")
@click.argument("kind", type=click.Choice(["strip", "tiny", "sleeve", "shirt"]))
@click.argument("out_dir", type=click.Path())
@click.option("--sdf-resolution", default=48, show_default=True)
def make_scene(kind, out_dir, sdf_resolution):
    """Generate a synthetic scene directory with meshes and a config file."""
    budgets = {"strip": 0.3, "tiny": 1.0 / 3.0, "sleeve": 0.20, "shirt": 0.15}
    # filter radius ~3 element sizes keeps optimized layouts island-free
    filter_radii = {"strip": 0.04, "tiny": 0.0, "sleeve": 0.04, "shirt": 0.05}
    if kind == "strip":
        scene = scene_gen.pinned_strip_scene()
    elif kind == "tiny":
        scene = scene_gen.tiny_strip_scene()
    elif kind == "sleeve":
        scene = scene_gen.sleeve_scene(sdf_resolution=sdf_resolution)
    else:
        scene = scene_gen.shirt_scene(sdf_resolution=sdf_resolution)
    extra = {
        "coverage_budget": budgets[kind],
        "optimizer": {
            "target_coverage": budgets[kind],
            "filter_radius": filter_radii[kind],
        },
    }
    if kind in ("sleeve", "shirt"):
        extra["contact"] = {"sdf_resolution": sdf_resolution, "sdf_cache": "sdf_cache"}
    path = write_scene_files(scene, out_dir, kind, extra=extra)
    click.echo(path)


if __name__ == "__main__":
    main()
