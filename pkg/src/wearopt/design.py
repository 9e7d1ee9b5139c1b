"""Reinforcement-layout optimization.

The design variable is one value d^e in [0, 1] per garment element
(binary after every update). The objective, maximized over designs at a
fixed material budget, is the sum over poses of the normalized ON-state
garment energy minus the normalized OFF-state garment energy; per-pose
normalization factors come from the dense design's ON solves so every
pose contributes on the same scale.

The evolutionary update ranks elements by filtered, history-averaged
sensitivities and re-selects the reinforced set each iteration, removing
a fixed coverage fraction per step and capping how much previously-void
area may return.
"""

from dataclasses import dataclass, field

import numpy as np

from .equilibrium import SolveConfig, solve_all_states
from .materials import interpolate_garment_modulus

D_MIN = 1e-3  # soft lower bound for void-element sensitivity evaluation


@dataclass
class DesignVector:
    values: np.ndarray  # d^e in [0, 1]
    frozen: np.ndarray  # bool mask; frozen elements stay reinforced

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.frozen = np.asarray(self.frozen, dtype=bool)
        if self.values.shape != self.frozen.shape:
            raise ValueError("design and frozen mask lengths differ")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ValueError("design values out of [0, 1]")

    def copy(self):
        return DesignVector(self.values.copy(), self.frozen.copy())


@dataclass
class BesoConfig:
    """Evolutionary update parameters."""

    ER: float = 0.015  # coverage removed per iteration (fraction)
    AR: float = 0.015  # max previously-void area re-added per iteration
    target_coverage: float = 0.15
    filter_radius: float = 0.0  # meters; 0 disables spatial filtering
    history_window: int = 2  # arithmetic averaging span (current + previous)
    stop_window: int = 5
    stop_tolerance: float = 1e-3
    max_iterations: int = 500
    renormalize_each_iteration: bool = False

    def validate(self):
        if not (0.0 < self.ER < 1.0 and 0.0 < self.AR < 1.0):
            raise ValueError("ER and AR must lie in (0, 1)")
        if not (0.0 < self.target_coverage <= 1.0):
            raise ValueError("target coverage must lie in (0, 1]")
        if self.filter_radius < 0.0:
            raise ValueError("filter radius must be non-negative")


@dataclass
class SensitivityField:
    alpha: np.ndarray
    iteration: int = 0
    per_pose_on: np.ndarray = None  # (K, m)
    per_pose_off: np.ndarray = None


@dataclass
class ProgressRecord:
    iteration: int
    coverage: float
    rho_on: list  # per pose
    rho_off: list
    objective: float
    snapshot_id: int
    solver_converged: bool = True


def element_sensitivities(scene, state, design):
    """d(garment energy)/d(d^e) at the state's fixed nodal positions.

    The membrane density is linear in the modulus, so the derivative is
    t^e A^e W1^e dY/dd with W1 the density at unit modulus; void elements
    are evaluated at a soft lower bound to keep the derivative finite.
    """
    mat = scene.materials
    design = np.asarray(design, dtype=float)
    Y = interpolate_garment_modulus(design, mat)
    W = np.asarray(state.breakdown.garment_densities, dtype=float)  # Y * W1
    W1 = W / Y
    d_eff = np.maximum(design, D_MIN)
    dY_dd = mat.p * d_eff ** (mat.p - 1.0) * (mat.Y_reinforced - mat.Y_cloth)
    mesh = scene.garment
    return mesh.thickness * mesh.rest_areas * W1 * dY_dd


def normalize_pose_energies(densities):
    """Scale per-pose element energy densities to a unit peak.

    ``densities`` is (K, m); returns (normalized, factors) where factors
    are 1/max_e per pose, or 0 for an all-zero (degenerate) pose.
    """
    densities = np.atleast_2d(np.asarray(densities, dtype=float))
    peaks = densities.max(axis=1)
    factors = np.where(peaks > 0.0, 1.0 / np.where(peaks > 0.0, peaks, 1.0), 0.0)
    return densities * factors[:, None], factors


def combined_sensitivity(on_fields, off_fields, factors, iteration=0):
    """Sum per-pose sensitivities: ON contributions positive, OFF negated.

    Each pose's fields are scaled by its normalization factor so every
    pose carries the same weight in the combined objective.
    """
    on_fields = np.atleast_2d(np.asarray(on_fields, dtype=float))
    off_fields = np.atleast_2d(np.asarray(off_fields, dtype=float))
    factors = np.asarray(factors, dtype=float)
    if on_fields.shape != off_fields.shape or len(factors) != len(on_fields):
        raise ValueError("sensitivity field dimensions disagree")
    alpha = np.einsum("k,ke->e", factors, on_fields - off_fields)
    return SensitivityField(
        alpha=alpha,
        iteration=iteration,
        per_pose_on=on_fields,
        per_pose_off=off_fields,
    )


def filter_sensitivities(alpha, centroids, radius):
    """Linear-decay radius filter over element centroids."""
    if radius <= 0.0:
        return np.asarray(alpha, dtype=float).copy()
    from scipy.spatial import cKDTree

    centroids = np.asarray(centroids, dtype=float)
    tree = cKDTree(centroids)
    out = np.empty(len(alpha))
    for e, nbrs in enumerate(tree.query_ball_point(centroids, radius)):
        w = radius - np.linalg.norm(centroids[nbrs] - centroids[e], axis=1)
        out[e] = np.dot(w, np.asarray(alpha)[nbrs]) / np.sum(w)
    return out


def filter_and_average(raw, mesh, cfg, history):
    """Spatial filter followed by averaging with the previous filtered field.

    ``history`` is a mutable list of previously filtered fields; the new
    filtered field is appended to it.
    """
    filt = filter_sensitivities(raw.alpha, mesh.element_centroids(), cfg.filter_radius)
    if history and cfg.history_window > 1:
        window = history[-(cfg.history_window - 1) :] + [filt]
        averaged = np.mean(window, axis=0)
    else:
        averaged = filt.copy()
    history.append(filt)
    return SensitivityField(alpha=averaged, iteration=raw.iteration)


def coverage_of(design, areas):
    return float(np.dot(areas, design.values) / np.sum(areas))


def beso_step(design, alpha, cfg, areas):
    """One evolutionary update: remove toward the target, cap additions.

    Elements are ranked by sensitivity (descending, index tie-break);
    reinforcement is re-selected greedily by rank until the iteration's
    coverage target is met, except that newly added (previously void)
    area may not exceed AR per iteration and frozen elements always stay.
    """
    areas = np.asarray(areas, dtype=float)
    total = float(np.sum(areas))
    current = coverage_of(design, areas)
    target = max(cfg.target_coverage, current * (1.0 - cfg.ER))

    rank = np.lexsort((np.arange(len(alpha)), -np.asarray(alpha, dtype=float)))
    old = design.values > 0.5
    new_vals = np.zeros_like(design.values)
    new_vals[design.frozen] = 1.0
    budget = target * total - float(np.sum(areas[design.frozen]))
    add_budget = cfg.AR * total
    for e in rank:
        if design.frozen[e]:
            continue
        if budget - areas[e] < -1e-12 * total:
            continue
        if not old[e]:
            if add_budget - areas[e] < -1e-12 * total:
                continue
            add_budget -= areas[e]
        new_vals[e] = 1.0
        budget -= areas[e]
    return DesignVector(new_vals, design.frozen.copy())


def dual_objective(states, scene, factors, design):
    """Sum over poses of normalized (E_ON - E_OFF) garment energies."""
    obj = 0.0
    per_pose = []
    for k in range(scene.num_poses):
        e_on = _garment_energy_of(scene, states[(k, "ON")])
        e_off = _garment_energy_of(scene, states[(k, "OFF")])
        contrib = factors[k] * (e_on - e_off)
        per_pose.append(contrib)
        obj += contrib
    return obj, per_pose


def _garment_energy_of(scene, state):
    return float(state.breakdown.E_garment)


def relative_energy_density(E_opt, A_opt, E_dense, A_dense):
    """Energy-per-reinforced-area of a design relative to the dense design."""
    if E_dense <= 0.0 or A_opt <= 0.0:
        raise ValueError("degenerate relative-energy-density inputs")
    return (E_opt * A_dense) / (E_dense * A_opt)


def reinforced_area(design, areas):
    return float(np.dot(np.asarray(areas, dtype=float), design.values))


@dataclass
class OptimizeResult:
    design: DesignVector
    progress: list
    snapshots: list  # design value arrays, snapshot_id indexes this list
    normalization: np.ndarray
    dense_states: dict
    states: dict
    filter_history: list = field(default_factory=list)


def optimize(
    scene,
    cfg,
    solve_cfg=None,
    callback=None,
    initial=None,
    normalization=None,
    filter_history=None,
    start_iteration=0,
    progress=None,
    snapshots=None,
):
    """Run the evolutionary loop from the dense design.

    Every iteration solves all (pose, ON/OFF) states for the current
    design, forms filtered sensitivities, and re-selects the reinforced
    set. Stops once coverage reached the target and the objective's
    relative change over ``cfg.stop_window`` iterations falls below
    ``cfg.stop_tolerance``. The resume arguments (initial, normalization,
    filter_history, start_iteration, progress, snapshots) restore a run
    from persisted state.
    """
    cfg.validate()
    solve_cfg = solve_cfg or SolveConfig()
    mesh = scene.garment
    areas = mesh.rest_areas
    modes = [np.ones(scene.num_clutches), np.zeros(scene.num_clutches)]

    if initial is None:
        design = DesignVector(np.ones(mesh.num_elements), scene.frozen_elements.copy())
    else:
        design = initial.copy()
    history = [] if filter_history is None else [np.asarray(h) for h in filter_history]
    progress = [] if progress is None else list(progress)
    snapshots = [] if snapshots is None else [np.asarray(s) for s in snapshots]

    factors = None if normalization is None else np.asarray(normalization, dtype=float)
    objectives = [p.objective for p in progress]
    dense_states = None
    states = None

    it = start_iteration
    while it < cfg.max_iterations:
        states = solve_all_states(scene, design.values, modes, cfg=solve_cfg)
        all_converged = all(s.converged for s in states.values())

        if factors is None or cfg.renormalize_each_iteration:
            dens = np.stack(
                [states[(k, "ON")].breakdown.garment_densities for k in range(scene.num_poses)]
            )
            _, factors = normalize_pose_energies(dens)
        if dense_states is None:
            if it == 0 and np.all(design.values == 1.0):
                dense_states = states
            else:  # resumed run: re-solve the dense reference
                dense_states = solve_all_states(
                    scene, np.ones(mesh.num_elements), modes, cfg=solve_cfg
                )

        raw_on, raw_off = [], []
        for k in range(scene.num_poses):
            raw_on.append(element_sensitivities(scene, states[(k, "ON")], design.values))
            raw_off.append(element_sensitivities(scene, states[(k, "OFF")], design.values))
        combined = combined_sensitivity(raw_on, raw_off, factors, iteration=it)
        smoothed = filter_and_average(combined, mesh, cfg, history)

        obj, _ = dual_objective(states, scene, factors, design)
        cov = coverage_of(design, areas)
        rho_on, rho_off = [], []
        for k in range(scene.num_poses):
            rho_on.append(_rho(scene, states, dense_states, design, areas, k, "ON"))
            rho_off.append(_rho(scene, states, dense_states, design, areas, k, "OFF"))
        snapshots.append(design.values.copy())
        rec = ProgressRecord(
            iteration=it,
            coverage=cov,
            rho_on=rho_on,
            rho_off=rho_off,
            objective=obj,
            snapshot_id=len(snapshots) - 1,
            solver_converged=all_converged,
        )
        progress.append(rec)
        objectives.append(obj)
        if callback is not None:
            callback(rec, design)

        at_target = cov <= cfg.target_coverage + 1e-12
        if at_target and len(objectives) > cfg.stop_window:
            base = objectives[-(cfg.stop_window + 1)]
            rel = abs(objectives[-1] - base) / max(abs(base), 1e-30)
            if rel < cfg.stop_tolerance:
                break
        if at_target and cfg.target_coverage >= 1.0 - 1e-12:
            break  # dense target: single evaluation

        design = beso_step(design, smoothed.alpha, cfg, areas)
        it += 1

    return OptimizeResult(
        design=design,
        progress=progress,
        snapshots=snapshots,
        normalization=factors,
        dense_states=dense_states,
        states=states,
        filter_history=history,
    )


def _rho(scene, states, dense_states, design, areas, pose, mode):
    if dense_states is None:
        return float("nan")
    e = _garment_energy_of(scene, states[(pose, mode)])
    e_dense = _garment_energy_of(scene, dense_states[(pose, mode)])
    a_dense = float(np.sum(areas))
    a_opt = reinforced_area(design, areas)
    if e_dense <= 0.0 or a_opt <= 0.0:
        return float("nan")
    return relative_energy_density(e, a_opt, e_dense, a_dense)


def evaluate_cross_matrix(designs, scene, solve_cfg=None, design_labels=None):
    """Relative-energy-density table: one row per design, one column per pose.

    Each design is solved in the ON mode for every pose and compared
    against the dense design's matching solves.
    """
    solve_cfg = solve_cfg or SolveConfig()
    areas = scene.garment.rest_areas
    modes = [np.ones(scene.num_clutches)]
    dense = DesignVector(
        np.ones(scene.garment.num_elements), scene.frozen_elements.copy()
    )
    dense_states = solve_all_states(scene, dense.values, modes, cfg=solve_cfg)

    rows = []
    converged = []
    for dv in designs:
        states = solve_all_states(scene, dv.values, modes, cfg=solve_cfg)
        row, conv = [], []
        for k in range(scene.num_poses):
            e = _garment_energy_of(scene, states[(k, "ON")])
            e_dense = _garment_energy_of(scene, dense_states[(k, "ON")])
            row.append(
                relative_energy_density(
                    e, reinforced_area(dv, areas), e_dense, float(np.sum(areas))
                )
            )
            conv.append(states[(k, "ON")].converged)
        rows.append(row)
        converged.append(conv)
    labels = design_labels or [f"design_{i}" for i in range(len(designs))]
    return {
        "rho": np.array(rows),
        "converged": np.array(converged, dtype=bool),
        "row_labels": labels,
        "column_labels": list(scene.pose_labels),
    }


def structural_diagnostics(design, scene):
    """Connectivity report for a reinforced layout.

    Flags reinforced islands that touch neither a clutch attachment nor a
    garment anchor, and clutch endpoints without adjacent reinforcement;
    also reports the top-decile energy elements per pose when states are
    supplied via the scene's last solve (load paths are computed lazily
    by callers that have states; here connectivity only).
    """
    mesh = scene.garment
    vals = design.values > 0.5
    m = mesh.num_elements

    # element adjacency over shared edges
    parent = np.arange(m)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (va, vb), elems in mesh.edge_triangles.items():
        if len(elems) == 2:
            e0, e1 = elems
            if vals[e0] and vals[e1]:
                r0, r1 = find(e0), find(e1)
                if r0 != r1:
                    parent[r1] = r0

    anchored_elements = set()
    anchor_verts = set(int(v) for v in scene.attachments.garment_vertices)
    for e in range(m):
        if any(int(v) in anchor_verts for v in mesh.triangles[e]):
            anchored_elements.add(e)
    attachment_elements = set()
    for coup in scene.attachments.clutch_couplings:
        attachment_elements.update(int(e) for e in coup.elements)

    comps = {}
    for e in range(m):
        if vals[e]:
            comps.setdefault(find(e), []).append(e)

    islands = []
    for root, elems in comps.items():
        touches = any(
            (e in attachment_elements) or (e in anchored_elements) for e in elems
        )
        if not touches:
            islands.append(sorted(elems))

    unanchored_endpoints = []
    for ci, coup in enumerate(scene.attachments.clutch_couplings):
        if not any(vals[int(e)] for e in coup.elements):
            unanchored_endpoints.append(ci)

    return {
        "num_components": len(comps),
        "islands": islands,
        "unanchored_clutches": unanchored_endpoints,
        "reinforced_elements": int(np.sum(vals)),
    }


def load_paths(scene, states, fraction=0.1):
    """Top-fraction energy-density elements per (pose, mode) state."""
    out = {}
    for key, st in states.items():
        W = np.asarray(st.breakdown.garment_densities)
        n = max(1, int(np.ceil(fraction * len(W))))
        idx = np.argsort(-W)[:n]
        out[key] = np.sort(idx)
    return out
