"""Self-contained on-disk artifacts for optimization runs.

A run bundle is a directory::

    <run id>/
      run.json           run id, schema version, config snapshot, resume state
      progress.csv       per-iteration coverage / objective / rho metrics
      designs/iter_NNNN.txt   design vector snapshots (one per iteration)
      fields/<pose>_<mode>.txt  final per-element energy densities
      cross_matrix.csv   optional design-vs-motion rho matrix

All floating-point text payloads are written with 17 significant digits
so a reloaded bundle reproduces the run bit-for-bit.
"""

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .design import ProgressRecord

BUNDLE_VERSION = 1


def _fmt(v):
    return f"{float(v):.17g}"


@dataclass
class RunBundle:
    run_id: str
    config: dict  # scene configuration snapshot (plain dict)
    progress: list = field(default_factory=list)  # ProgressRecords
    snapshots: list = field(default_factory=list)  # design value arrays
    normalization: np.ndarray = None
    filter_history: list = field(default_factory=list)
    fields: dict = field(default_factory=dict)  # (pose label, mode) -> densities
    cross_matrix: dict = None  # {"rows": [...], "cols": [...], "rho": 2d list}
    pose_labels: list = field(default_factory=list)
    next_iteration: int = 0

    def validate(self):
        ids = [p.snapshot_id for p in self.progress]
        if len(set(ids)) != len(ids):
            raise ValueError("snapshot ids must be unique")
        for p in self.progress:
            if not (0 <= p.snapshot_id < len(self.snapshots)):
                raise ValueError("progress record points at a missing snapshot")


def bundle_from_result(run_id, config, result, scene):
    """Package an OptimizeResult (plus its scene context) as a RunBundle."""
    fields = {}
    if result.states:
        for (pose, mode), st in result.states.items():
            label = scene.pose_labels[pose]
            fields[(label, mode)] = np.asarray(st.breakdown.garment_densities)
    return RunBundle(
        run_id=run_id,
        config=config,
        progress=list(result.progress),
        snapshots=[np.asarray(s) for s in result.snapshots],
        normalization=np.asarray(result.normalization, dtype=float),
        filter_history=[np.asarray(h) for h in result.filter_history],
        fields=fields,
        pose_labels=list(scene.pose_labels),
        next_iteration=result.progress[-1].iteration + 1 if result.progress else 0,
    )


def _write_vector(path, values):
    values = np.asarray(values, dtype=float)
    with open(path, "w") as f:
        f.write(f"{values.size}\n")
        for v in values:
            f.write(_fmt(v) + "\n")


def _read_vector(path):
    with open(path) as f:
        n = int(f.readline())
        vals = np.array([float(f.readline()) for _ in range(n)])
    return vals


def save_bundle(bundle, root):
    """Write the bundle under ``root/<run id>``; returns the directory."""
    bundle.validate()
    out = os.path.join(root, bundle.run_id)
    os.makedirs(os.path.join(out, "designs"), exist_ok=True)

    meta = {
        "bundle_version": BUNDLE_VERSION,
        "run_id": bundle.run_id,
        "config": bundle.config,
        "pose_labels": bundle.pose_labels,
        "next_iteration": bundle.next_iteration,
        "normalization": None
        if bundle.normalization is None
        else [_fmt(v) for v in np.asarray(bundle.normalization).ravel()],
        "filter_history": [
            [_fmt(v) for v in np.asarray(h)] for h in bundle.filter_history
        ],
    }
    with open(os.path.join(out, "run.json"), "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")

    labels = bundle.pose_labels
    with open(os.path.join(out, "progress.csv"), "w", newline="") as f:
        w = csv.writer(f)
        header = ["iteration", "coverage", "objective", "snapshot_id", "solver_converged"]
        header += [f"rho_on_{l}" for l in labels] + [f"rho_off_{l}" for l in labels]
        w.writerow(header)
        for p in bundle.progress:
            row = [p.iteration, _fmt(p.coverage), _fmt(p.objective), p.snapshot_id,
                   int(p.solver_converged)]
            row += [_fmt(v) for v in p.rho_on] + [_fmt(v) for v in p.rho_off]
            w.writerow(row)

    for i, snap in enumerate(bundle.snapshots):
        _write_vector(os.path.join(out, "designs", f"iter_{i:04d}.txt"), snap)

    if bundle.fields:
        os.makedirs(os.path.join(out, "fields"), exist_ok=True)
        for (label, mode), dens in bundle.fields.items():
            _write_vector(os.path.join(out, "fields", f"{label}_{mode}.txt"), dens)

    if bundle.cross_matrix is not None:
        with open(os.path.join(out, "cross_matrix.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["design"] + list(bundle.cross_matrix["cols"]))
            for name, row in zip(
                bundle.cross_matrix["rows"], bundle.cross_matrix["rho"]
            ):
                w.writerow([name] + [_fmt(v) for v in row])
    return out


def load_bundle(path):
    """Reload a bundle directory saved by :func:`save_bundle`."""
    with open(os.path.join(path, "run.json")) as f:
        meta = json.load(f)
    if meta.get("bundle_version") != BUNDLE_VERSION:
        raise ValueError(
            f"bundle version {meta.get('bundle_version')} not supported "
            f"(expected {BUNDLE_VERSION})"
        )
    labels = meta["pose_labels"]

    progress = []
    with open(os.path.join(path, "progress.csv")) as f:
        for row in csv.DictReader(f):
            progress.append(
                ProgressRecord(
                    iteration=int(row["iteration"]),
                    coverage=float(row["coverage"]),
                    rho_on=[float(row[f"rho_on_{l}"]) for l in labels],
                    rho_off=[float(row[f"rho_off_{l}"]) for l in labels],
                    objective=float(row["objective"]),
                    snapshot_id=int(row["snapshot_id"]),
                    solver_converged=bool(int(row["solver_converged"])),
                )
            )

    design_dir = os.path.join(path, "designs")
    snapshots = []
    if os.path.isdir(design_dir):
        for name in sorted(os.listdir(design_dir)):
            snapshots.append(_read_vector(os.path.join(design_dir, name)))

    fields = {}
    field_dir = os.path.join(path, "fields")
    if os.path.isdir(field_dir):
        for name in sorted(os.listdir(field_dir)):
            stem = name[:-4]
            label, mode = stem.rsplit("_", 1)
            fields[(label, mode)] = _read_vector(os.path.join(field_dir, name))

    cross = None
    cm_path = os.path.join(path, "cross_matrix.csv")
    if os.path.exists(cm_path):
        with open(cm_path) as f:
            rows = list(csv.reader(f))
        cross = {
            "cols": rows[0][1:],
            "rows": [r[0] for r in rows[1:]],
            "rho": [[float(v) for v in r[1:]] for r in rows[1:]],
        }

    bundle = RunBundle(
        run_id=meta["run_id"],
        config=meta["config"],
        progress=progress,
        snapshots=snapshots,
        normalization=None
        if meta["normalization"] is None
        else np.array([float(v) for v in meta["normalization"]]),
        filter_history=[
            np.array([float(v) for v in h]) for h in meta["filter_history"]
        ],
        fields=fields,
        cross_matrix=cross,
        pose_labels=labels,
        next_iteration=meta["next_iteration"],
    )
    bundle.validate()
    return bundle


def resume_arguments(bundle, scene):
    """Keyword arguments restoring :func:`wearopt.design.optimize` from a bundle.

    Snapshots are recorded at the start of each iteration, before the
    design update, so the state *after* the last recorded iteration is
    not persisted; resuming therefore re-runs the last recorded
    iteration (dropping its record first so it is regenerated
    identically).
    """
    from .design import DesignVector

    if not bundle.snapshots:
        return {}
    last = bundle.progress[-1].iteration if bundle.progress else 0
    return {
        "initial": DesignVector(bundle.snapshots[-1].copy(), scene.frozen_elements.copy()),
        "normalization": bundle.normalization,
        "filter_history": [h.copy() for h in bundle.filter_history[:-1]],
        "start_iteration": last,
        "progress": list(bundle.progress[:-1]),
        "snapshots": [s.copy() for s in bundle.snapshots[:-1]],
    }
