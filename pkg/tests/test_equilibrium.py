"""Equilibrium solves: analytic oracle, convergence contract, monotonicity,
warm starts, and the generic scaled quasi-Newton minimizer."""

import numpy as np
import pytest

from wearopt.energy import AttachmentSet, Scene
from wearopt.equilibrium import (
    SolveConfig,
    minimize_energy,
    mode_label,
    solve_all_states,
    solve_equilibrium,
)
from wearopt.materials import MaterialParams, lame_parameters, membrane_energy_density
from wearopt.mesh import TriMesh
from wearopt.scenes import pinned_strip_scene, tiny_strip_scene


def homogeneous_strip_scene(l1=1.10, l2=1.05):
    """Strip with its whole boundary pinned at a homogeneous biaxial
    stretch. A uniform taut deformation has divergence-free discrete
    stress, so the homogeneous map is the exact interior equilibrium."""
    from wearopt.scenes import grid_strip

    verts, tris = grid_strip(0.2, 0.06, 10, 3)
    garment = TriMesh(verts, tris)
    posed = verts.copy()
    posed[:, 0] *= l1
    posed[:, 1] *= l2
    boundary = garment.boundary_vertices()
    attachments = AttachmentSet(
        stiffness=1e8,
        garment_vertices=boundary,
        garment_targets=posed[None, boundary],
    )
    scene = Scene(
        garment=garment,
        pose_labels=["biaxial"],
        garment_pose_positions=posed[None],
        clutches=[],
        attachments=attachments,
    )
    attachments.validate(scene)
    return scene, posed


class TestAnalyticOracle:
    def test_homogeneous_biaxial_stretch(self):
        l1, l2 = 1.10, 1.05
        scene, posed = homogeneous_strip_scene(l1, l2)
        design = np.zeros(scene.garment.num_elements)  # plain cloth
        # perturb the interior so the solver has real work to do
        rng = np.random.default_rng(0)
        x0 = posed + 1e-3 * rng.standard_normal(posed.shape)
        b = scene.attachments.garment_vertices
        x0[b] = posed[b]
        state = solve_equilibrium(
            scene, 0, np.zeros(0), design, init=(x0, []), cfg=SolveConfig()
        )
        assert state.converged
        assert np.max(np.linalg.norm(state.x - posed, axis=1)) < 1e-4

        # energy matches the closed-form membrane density
        mat = MaterialParams()
        F = np.array([[l1, 0.0], [0.0, l2], [0.0, 0.0]])
        W, _ = membrane_energy_density(F, mat.Y_cloth, mat.nu)
        E_exact = W * mat.thickness * scene.garment.total_area
        # slight deficit from the finite anchor compliance
        assert state.breakdown.E_garment == pytest.approx(E_exact, rel=1e-4)

    def test_wrinkled_transverse_stress_free(self):
        # pin only the ends at 110% length: the relaxed membrane leaves the
        # width slack, so equilibrium energy equals the natural-width
        # density regardless of the attained width
        from wearopt.materials import _natural_width_stretch
        from wearopt.scenes import grid_strip

        l1 = 1.10
        mat = MaterialParams()
        mu, lam = lame_parameters(1.0, mat.nu)
        y = _natural_width_stretch(np.array([l1]), mu, lam)[0]
        verts, tris = grid_strip(0.2, 0.06, 10, 3)
        garment = TriMesh(verts, tris)
        posed = verts.copy()
        posed[:, 0] *= l1
        # pin the ends at the natural (transversely stress-free) width so
        # no boundary layer forms
        posed[:, 1] = 0.03 + (posed[:, 1] - 0.03) * y
        ends = np.where((verts[:, 0] < 1e-12) | (verts[:, 0] > 0.2 - 1e-12))[0]
        attachments = AttachmentSet(
            stiffness=1e8,
            garment_vertices=ends.astype(np.int64),
            garment_targets=posed[None, ends],
        )
        scene = Scene(
            garment=garment,
            pose_labels=["uniaxial"],
            garment_pose_positions=posed[None],
            clutches=[],
            attachments=attachments,
        )
        design = np.zeros(garment.num_elements)
        state = solve_equilibrium(scene, 0, np.zeros(0), design)
        assert state.converged
        F = np.array([[l1, 0.0], [0.0, y], [0.0, 0.0]])
        W, _ = membrane_energy_density(F, mat.Y_cloth, mat.nu)
        E_exact = W * mat.thickness * garment.total_area
        assert state.breakdown.E_garment == pytest.approx(E_exact, rel=1e-4)


class TestSolverContract:
    @pytest.mark.parametrize("mode_gamma", [("ON", 1.0), ("OFF", 0.0)])
    def test_strip_scene_converges(self, mode_gamma):
        label, gv = mode_gamma
        scene = pinned_strip_scene()
        design = np.full(scene.garment.num_elements, 0.5)
        design[scene.frozen_elements] = 1.0
        state = solve_equilibrium(scene, 0, np.array([gv]), design)
        assert state.converged
        assert state.residual <= 1e-7
        assert state.iterations <= 2000
        assert state.mode == label

    def test_energies_monotone(self):
        scene = pinned_strip_scene()
        design = np.ones(scene.garment.num_elements)
        state = solve_equilibrium(scene, 0, np.ones(1), design)
        e = np.asarray(state.energies)
        assert len(e) >= 2
        slack = 1e-12 * max(1.0, abs(e[0]))
        assert np.all(np.diff(e) <= slack)

    def test_warm_start_from_solution_is_stable(self):
        scene = tiny_strip_scene()
        design = np.ones(scene.garment.num_elements)
        s1 = solve_equilibrium(scene, 0, np.ones(1), design)
        assert s1.converged
        s2 = solve_equilibrium(scene, 0, np.ones(1), design, init=(s1.x, s1.q))
        assert s2.converged
        assert s2.iterations == 0
        assert np.allclose(s2.x, s1.x, atol=1e-8)
        for q1, q2 in zip(s1.q, s2.q):
            assert np.allclose(q2, q1, atol=1e-8)

    def test_deterministic(self):
        scene = tiny_strip_scene()
        design = np.full(scene.garment.num_elements, 0.4)
        design[scene.frozen_elements] = 1.0
        s1 = solve_equilibrium(scene, 0, np.zeros(1), design)
        s2 = solve_equilibrium(scene, 0, np.zeros(1), design)
        assert np.array_equal(s1.x, s2.x)
        assert s1.breakdown.total == s2.breakdown.total

    def test_wrong_warm_start_shape_rejected(self):
        scene = tiny_strip_scene()
        design = np.ones(scene.garment.num_elements)
        with pytest.raises(ValueError):
            solve_equilibrium(
                scene, 0, np.ones(1), design, init=(np.zeros((3, 3)), [])
            )

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolveConfig(tolerance=-1.0).validate()
        with pytest.raises(ValueError):
            SolveConfig(max_iterations=0).validate()


class TestSolveAllStates:
    def test_batch_covers_all_pairs(self):
        scene = tiny_strip_scene()
        design = np.ones(scene.garment.num_elements)
        modes = [np.ones(1), np.zeros(1)]
        states = solve_all_states(scene, design, modes)
        assert set(states) == {(0, "ON"), (0, "OFF")}
        assert all(s.converged for s in states.values())
        # activating the clutch can only raise the stored energy
        assert states[(0, "ON")].breakdown.total >= states[(0, "OFF")].breakdown.total

    def test_warm_start_inits_forwarded(self):
        scene = tiny_strip_scene()
        design = np.ones(scene.garment.num_elements)
        modes = [np.ones(1)]
        first = solve_all_states(scene, design, modes)
        inits = {k: (s.x, s.q) for k, s in first.items()}
        again = solve_all_states(scene, design, modes, inits=inits)
        assert again[(0, "ON")].iterations == 0


class TestModeLabel:
    def test_labels(self):
        assert mode_label(np.ones(2)) == "ON"
        assert mode_label(np.zeros(3)) == "OFF"
        assert mode_label(np.array([])) == "ON"
        assert mode_label(np.array([1.0, 0.0])) == "g1|0"


class TestGenericMinimizer:
    def test_quadratic(self):
        A = np.diag([1.0, 10.0, 100.0])
        b = np.array([1.0, -2.0, 3.0])

        def f(z):
            return 0.5 * z @ A @ z - b @ z, A @ z - b

        z, fz, gz, it, conv, energies = minimize_energy(
            f, np.zeros(3), SolveConfig(tolerance=1e-10)
        )
        assert conv
        assert np.allclose(z, np.linalg.solve(A, b), atol=1e-8)
        assert np.all(np.diff(energies) <= 0.0)

    def test_scaled_variables(self):
        # badly scaled quadratic: the stiffness-equilibrated path solves it
        k = np.array([1.0, 1e8])

        def f(z):
            return 0.5 * np.sum(k * (z - 1.0) ** 2), k * (z - 1.0)

        z, _, _, _, conv, _ = minimize_energy(
            f, np.zeros(2), SolveConfig(tolerance=1e-9), scale=np.sqrt(k)
        )
        assert conv
        assert np.allclose(z, 1.0, atol=1e-8)

    def test_rosenbrock(self):
        def f(z):
            x, y = z
            fv = (1 - x) ** 2 + 100 * (y - x * x) ** 2
            g = np.array(
                [-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)]
            )
            return fv, g

        z, _, _, _, conv, _ = minimize_energy(
            f, np.array([-1.2, 1.0]), SolveConfig(tolerance=1e-8, max_iterations=500)
        )
        assert conv
        assert np.allclose(z, 1.0, atol=1e-6)
