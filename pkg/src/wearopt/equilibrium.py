"""Quasi-static equilibrium solves.

Scene solves use a globalized Newton method: a sparse positive-semidefinite
projection of the energy Hessian, Levenberg damping scaled by per-variable
stiffness, and an Armijo backtracking line search. A scaled limited-memory
quasi-Newton minimizer is kept for callers without Hessian assembly.

A state counts as converged when the 2-norm of the total-energy gradient
drops to the configured tolerance (1e-7 by default). Accepted steps always
satisfy sufficient decrease, so the energy is monotone over iterations.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .energy import SceneState, total_energy_and_gradient, total_hessian
from .materials import NumericError, clutch_modulus, interpolate_garment_modulus


@dataclass
class SolveConfig:
    tolerance: float = 1e-7
    max_iterations: int = 2000
    history: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 30
    stall_window: int = 40
    warm_start: bool = False
    verbose: bool = False  # per-iteration diagnostics on stdout

    def validate(self):
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max iterations must be >= 1")


@dataclass
class EquilibriumState:
    x: np.ndarray
    q: list
    pose: int
    mode: str
    gamma: np.ndarray
    breakdown: object
    iterations: int
    converged: bool
    residual: float = np.inf  # final gradient norm
    energies: list = field(default_factory=list)  # accepted energies, monotone


def _two_loop(g, s_list, y_list, rho_list):
    q = g.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_list:
        s, y = s_list[-1], y_list[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _wolfe_line_search(f, z, f0, g0, p, c1, c2, max_iter):
    """Strong-Wolfe search (bracket + zoom). Returns (alpha, f, g) or None.

    Non-finite trial energies are treated as overshoot and bracketed away.
    """
    dphi0 = g0 @ p
    if dphi0 >= 0.0:
        return None

    def phi(a):
        fa, ga = f(z + a * p)
        return fa, ga, (ga @ p if np.all(np.isfinite(ga)) else np.nan)

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    a = 1.0
    lo = hi = None
    f_lo = d_lo = None
    for i in range(max_iter):
        fa, ga, da = phi(a)
        if not np.isfinite(fa) or fa > f0 + c1 * a * dphi0 or (i > 0 and fa >= f_prev):
            lo, hi, f_lo, d_lo = a_prev, a, f_prev, d_prev
            break
        if abs(da) <= -c2 * dphi0:
            return a, fa, ga
        if da >= 0.0:
            lo, hi, f_lo, d_lo = a, a_prev, fa, da
            break
        a_prev, f_prev, d_prev = a, fa, da
        a *= 2.0
    else:
        return None

    # zoom
    for _ in range(max_iter):
        a = 0.5 * (lo + hi)
        fa, ga, da = phi(a)
        if not np.isfinite(fa) or fa > f0 + c1 * a * dphi0 or fa >= f_lo:
            hi = a
        else:
            if abs(da) <= -c2 * dphi0:
                return a, fa, ga
            if da * (hi - lo) >= 0.0:
                hi = lo
            lo, f_lo, d_lo = a, fa, da
        if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
            break
    if f_lo is not None and f_lo < f0 + c1 * lo * dphi0 and lo > 0.0:
        fa, ga, _ = phi(lo)
        return lo, fa, ga
    return None


def _backtracking(f, z, f0, g0, c1, max_iter=60):
    p = -g0
    dphi0 = g0 @ p
    a = 1.0 / max(1.0, np.linalg.norm(g0))
    for _ in range(max_iter):
        fa, ga = f(z + a * p)
        if np.isfinite(fa) and fa <= f0 + c1 * a * dphi0:
            return a, p, fa, ga
        a *= 0.5
    return None


def _newton_minimize(f, hess, z0, cfg, D):
    """Globalized Newton: sparse PSD-projected Hessian, Levenberg damping,
    Armijo backtracking. D is the per-variable stiffness diagonal that
    scales the damping term."""
    from scipy import sparse
    from scipy.sparse.linalg import splu

    z = np.asarray(z0, dtype=float)
    fz, gz = f(z)
    if not np.isfinite(fz):
        raise NumericError("non-finite energy at the initial state")
    energies = [fz]
    gnorm = np.linalg.norm(gz)
    Dm = sparse.diags(D)
    lam = 1e-10
    it = 0
    raw = False  # use the unprojected Hessian once full steps are accepted
    while gnorm > cfg.tolerance and it < cfg.max_iterations:
        H = hess(z, project=not raw)
        stepped = False
        for _ in range(40):  # escalate damping until a step is accepted
            def worse():
                # raw Hessian failed to give descent: fall back to the
                # projected one before escalating the damping
                nonlocal raw, H
                if raw:
                    raw = False
                    H = hess(z, project=True)
                else:
                    return True
                return False

            try:
                lu = splu((H + lam * Dm).tocsc())
                p = lu.solve(-gz)
            except RuntimeError:
                if worse():
                    lam *= 10.0
                continue
            slope = gz @ p
            if not np.all(np.isfinite(p)) or slope >= 0.0:
                if worse():
                    lam *= 10.0
                continue
            # near the minimum the decrease drops below the floating-point
            # resolution of the energy; judge such steps by their
            # gradient-norm reduction instead
            ftol = 1e-13 * max(1.0, abs(fz))
            a = 1.0
            for _ in range(cfg.max_line_search):
                fn, gn = f(z + a * p)
                if np.isfinite(fn) and (
                    fn <= fz + cfg.c1 * a * slope
                    or (fn <= fz + ftol and np.linalg.norm(gn) < gnorm)
                ):
                    break
                a *= 0.5
            else:
                if worse():
                    lam *= 10.0
                continue
            z = z + a * p
            fz, gz = fn, gn
            energies.append(fz)
            gnorm = np.linalg.norm(gz)
            lam = max(1e-12, lam * (0.3 if a == 1.0 else 2.0))
            raw = a == 1.0
            stepped = True
            break
        it += 1
        if cfg.verbose:
            print(f"  newton {it:4d} gn={gnorm:.3e} E={fz:.10e} lam={lam:.1e} a={a:.2e}")
        if not stepped:
            break  # damping escalation failed to produce descent
    return z, fz, gz, it, bool(gnorm <= cfg.tolerance), energies


def minimize_energy(f, z0, cfg, scale=None):
    """Minimize f(z) -> (value, gradient). Returns (z, value, gradient,
    iterations, converged, accepted energies).

    ``scale`` is an optional positive diagonal (sqrt of per-variable
    stiffness); minimization runs in the scaled variables w = scale * z,
    which equilibrates stiff/soft regions, while convergence is still
    judged on the unscaled gradient norm.
    """
    z0 = np.asarray(z0, dtype=float)
    if scale is None:
        scale = np.ones_like(z0)
    inv = 1.0 / scale

    def fw(w):
        fz, gz = f(inv * w)
        return fz, gz  # keep the raw gradient; scaled one derived below

    w = scale * z0
    fz, gz = fw(w)
    if not np.isfinite(fz):
        raise NumericError("non-finite energy at the initial state")
    gw = inv * gz
    energies = [fz]
    s_list, y_list, rho_list = (
        deque(maxlen=cfg.history),
        deque(maxlen=cfg.history),
        deque(maxlen=cfg.history),
    )

    def f_scaled(wt):
        fv, gv = fw(wt)
        return fv, inv * gv

    gnorm = np.linalg.norm(gz)
    it = 0
    best_gnorm = gnorm
    since_progress = 0
    while gnorm > cfg.tolerance and it < cfg.max_iterations:
        p = -_two_loop(gw, s_list, y_list, rho_list)
        res = _wolfe_line_search(f_scaled, w, fz, gw, p, cfg.c1, cfg.c2, cfg.max_line_search)
        if res is None:
            back = _backtracking(f_scaled, w, fz, gw, cfg.c1)
            if back is None:
                break  # cannot decrease further; try the Newton phase
            a, p, fn, gwn = back
        else:
            a, fn, gwn = res
        step = a * p
        yk = gwn - gw
        sy = step @ yk
        if sy > 1e-12 * np.linalg.norm(step) * np.linalg.norm(yk):
            s_list.append(step)
            y_list.append(yk)
            rho_list.append(1.0 / sy)
        w = w + step
        fz, gw = fn, gwn
        gz = scale * gw
        energies.append(fz)
        gnorm = np.linalg.norm(gz)
        it += 1
        if cfg.verbose:
            print(f"  lbfgs {it:4d} gn={gnorm:.3e} E={fz:.10e} a={a:.2e}")
        if gnorm < 0.5 * best_gnorm:
            best_gnorm = gnorm
            since_progress = 0
        else:
            since_progress += 1
            if since_progress >= cfg.stall_window:
                break  # quasi-Newton has stalled

    return inv * w, fz, gz, it, bool(gnorm <= cfg.tolerance), energies


def _stiffness_scale(scene, pose, gamma, design):
    """Per-DOF sqrt-stiffness used to equilibrate the solve.

    Vertex stiffness is estimated as the sum of incident membrane
    stiffnesses (thickness * modulus, in N/m) plus any spring constants
    acting on the vertex. Stiff clutch/anchor regions otherwise dominate
    the landscape and stall the quasi-Newton iteration.
    """
    mat = scene.materials
    t = mat.thickness
    att = scene.attachments
    has_sdf = scene.sdfs[pose] is not None

    def element_stiffness(mesh, Y):
        # Hessian scale of the membrane term: t * A * Y * |Dm^-1|_F^2
        frob2 = np.sum(mesh.rest_edge_matrix_inv**2, axis=(1, 2))
        return t * mesh.rest_areas * np.broadcast_to(Y, (mesh.num_elements,)) * frob2

    Yg = interpolate_garment_modulus(design, mat)
    kx = np.zeros(scene.garment.num_vertices)
    np.add.at(kx, scene.garment.triangles, element_stiffness(scene.garment, Yg)[:, None])
    if att.garment_vertices.size:
        kx[att.garment_vertices] += att.stiffness
    if has_sdf:
        kx += scene.contact_stiffness

    kqs = []
    for ci, clutch in enumerate(scene.clutches):
        Yc = float(clutch_modulus(gamma[ci], mat))
        kq = np.zeros(clutch.mesh.num_vertices)
        np.add.at(kq, clutch.mesh.triangles, element_stiffness(clutch.mesh, Yc)[:, None])
        coup = att.clutch_couplings[ci]
        kq[coup.vertex_ids] += att.stiffness
        np.add.at(
            kx, scene.garment.triangles[coup.elements], att.stiffness * coup.weights
        )
        if has_sdf:
            kq += scene.contact_stiffness
        kqs.append(kq)

    k = scene.pack(np.repeat(kx, 3).reshape(-1, 3), [np.repeat(q, 3).reshape(-1, 3) for q in kqs])
    return np.sqrt(k)


def solve_equilibrium(scene, pose, gamma, design, init=None, cfg=None, mode=None):
    """Solve one (pose, activation-mode) quasi-static state."""
    cfg = cfg or SolveConfig()
    cfg.validate()
    gamma = np.asarray(gamma, dtype=float)
    design = np.asarray(design, dtype=float)

    if init is not None:
        x0, q0 = init
        if len(x0) != scene.garment.num_vertices:
            raise ValueError("warm-start state has wrong garment dimensions")
    else:
        x0, q0 = scene.initial_positions(pose)
    z0 = scene.pack(x0, q0)

    def f(z):
        x, qs = scene.unpack(z)
        state = SceneState(x=x, q=qs, pose=pose, gamma=gamma, design=design)
        bd, grad = total_energy_and_gradient(scene, state)
        return bd.total, grad

    def hess(z, project=True):
        x, qs = scene.unpack(z)
        state = SceneState(x=x, q=qs, pose=pose, gamma=gamma, design=design)
        return total_hessian(scene, state, project=project)

    scale = _stiffness_scale(scene, pose, gamma, design)
    z, fz, gz, iters, converged, energies = _newton_minimize(
        f, hess, z0, cfg, D=scale * scale
    )

    x, qs = scene.unpack(z)
    state = SceneState(x=x, q=qs, pose=pose, gamma=gamma, design=design)
    breakdown, _ = total_energy_and_gradient(scene, state)
    return EquilibriumState(
        x=x,
        q=qs,
        pose=pose,
        mode=mode or mode_label(gamma),
        gamma=gamma,
        breakdown=breakdown,
        iterations=iters,
        converged=converged,
        residual=float(np.linalg.norm(gz)),
        energies=energies,
    )


def mode_label(gamma):
    gamma = np.asarray(gamma, dtype=float)
    if gamma.size == 0 or np.all(gamma == 1.0):
        return "ON"
    if np.all(gamma == 0.0):
        return "OFF"
    return "g" + "".join(f"{g:g}|" for g in gamma).rstrip("|")


def solve_all_states(scene, design, modes, inits=None, cfg=None):
    """Solve every (pose, mode) pair; returns {(pose, mode_label): state}.

    Non-converged members are reported through their ``converged`` flag;
    the batch always returns completely.
    """
    results = {}
    for pose in range(scene.num_poses):
        for gamma in modes:
            label = mode_label(gamma)
            init = inits.get((pose, label)) if inits else None
            results[(pose, label)] = solve_equilibrium(
                scene, pose, gamma, design, init=init, cfg=cfg, mode=label
            )
    return results
