"""Reinforcement layout optimization: sensitivities, the evolutionary
update, the full loop on a small scene, and design diagnostics."""

import numpy as np
import pytest

from wearopt.design import (
    BesoConfig,
    DesignVector,
    beso_step,
    combined_sensitivity,
    coverage_of,
    dual_objective,
    element_sensitivities,
    evaluate_cross_matrix,
    filter_and_average,
    filter_sensitivities,
    load_paths,
    normalize_pose_energies,
    optimize,
    reinforced_area,
    relative_energy_density,
    structural_diagnostics,
)
from wearopt.energy import SceneState, total_energy_and_gradient
from wearopt.equilibrium import solve_all_states, solve_equilibrium
from wearopt.scenes import tiny_strip_scene


@pytest.fixture(scope="module")
def tiny():
    return tiny_strip_scene()


class TestDesignVector:
    def test_validation(self):
        with pytest.raises(ValueError):
            DesignVector(np.array([0.5, 1.5]), np.zeros(2, dtype=bool))
        with pytest.raises(ValueError):
            DesignVector(np.ones(3), np.zeros(2, dtype=bool))

    def test_copy_is_deep(self):
        d = DesignVector(np.ones(3), np.zeros(3, dtype=bool))
        c = d.copy()
        c.values[0] = 0.0
        assert d.values[0] == 1.0


class TestBesoConfig:
    def test_validation(self):
        for bad in (
            {"ER": 0.0},
            {"AR": 1.0},
            {"target_coverage": 0.0},
            {"filter_radius": -1.0},
        ):
            with pytest.raises(ValueError):
                BesoConfig(**bad).validate()


class TestSensitivities:
    def test_matches_finite_differences(self, tiny):
        scene = tiny
        design = np.full(scene.garment.num_elements, 0.5)
        state = solve_equilibrium(scene, 0, np.ones(1), design)
        assert state.converged
        alpha = element_sensitivities(scene, state, design)

        def garment_energy(dvals):
            st = SceneState(
                x=state.x, q=state.q, pose=0, gamma=np.ones(1), design=dvals
            )
            bd, _ = total_energy_and_gradient(scene, st)
            return bd.E_garment

        h = 1e-6
        for e in range(scene.garment.num_elements):
            dp = design.copy()
            dp[e] += h
            dm = design.copy()
            dm[e] -= h
            num = (garment_energy(dp) - garment_energy(dm)) / (2.0 * h)
            assert abs(alpha[e] - num) < 1e-6 * max(1.0, abs(num))

    def test_positive_where_strained(self, tiny):
        design = np.ones(tiny.garment.num_elements)
        state = solve_equilibrium(tiny, 0, np.ones(1), design)
        alpha = element_sensitivities(tiny, state, design)
        assert np.all(alpha >= 0.0)
        assert alpha.max() > 0.0


class TestNormalization:
    def test_unit_peak_per_pose(self):
        dens = np.array([[1.0, 4.0, 2.0], [10.0, 5.0, 0.0]])
        normed, factors = normalize_pose_energies(dens)
        assert np.allclose(normed.max(axis=1), 1.0)
        assert np.allclose(factors, [0.25, 0.1])

    def test_degenerate_pose(self):
        normed, factors = normalize_pose_energies(np.zeros((1, 4)))
        assert factors[0] == 0.0
        assert np.all(normed == 0.0)

    def test_combined_sensitivity(self):
        on = np.array([[2.0, 0.0], [0.0, 4.0]])
        off = np.array([[1.0, 1.0], [0.0, 0.0]])
        factors = np.array([1.0, 0.5])
        field = combined_sensitivity(on, off, factors, iteration=3)
        assert np.allclose(field.alpha, [1.0 * 1.0 + 0.0, -1.0 + 2.0])
        assert field.iteration == 3
        with pytest.raises(ValueError):
            combined_sensitivity(on, off[:1], factors)


class TestFiltering:
    def test_zero_radius_is_identity(self):
        a = np.array([3.0, -1.0, 2.0])
        out = filter_sensitivities(a, np.random.rand(3, 3), 0.0)
        assert np.array_equal(out, a)

    def test_uniform_field_invariant(self):
        cent = np.random.default_rng(0).random((20, 3)) * 0.1
        out = filter_sensitivities(np.full(20, 2.5), cent, 0.05)
        assert np.allclose(out, 2.5)

    def test_two_point_average(self):
        cent = np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0]])
        a = np.array([1.0, 3.0])
        r = 0.03
        out = filter_sensitivities(a, cent, r)
        w_self, w_other = r, r - 0.01
        expect0 = (w_self * 1.0 + w_other * 3.0) / (w_self + w_other)
        assert out[0] == pytest.approx(expect0)

    def test_history_averaging(self, tiny):
        from wearopt.design import SensitivityField

        cfg = BesoConfig(history_window=2)
        history = []
        m = tiny.garment.num_elements
        f1 = filter_and_average(SensitivityField(alpha=np.ones(m)), tiny.garment, cfg, history)
        assert np.allclose(f1.alpha, 1.0)
        f2 = filter_and_average(
            SensitivityField(alpha=3.0 * np.ones(m)), tiny.garment, cfg, history
        )
        assert np.allclose(f2.alpha, 2.0)  # mean of the last two
        assert len(history) == 2


class TestBesoStep:
    def setup_method(self):
        self.areas = np.ones(10)
        self.frozen = np.zeros(10, dtype=bool)

    def test_removes_lowest_sensitivity(self):
        design = DesignVector(np.ones(10), self.frozen)
        alpha = np.arange(10, dtype=float)
        cfg = BesoConfig(ER=0.2, AR=0.1, target_coverage=0.5)
        out = beso_step(design, alpha, cfg, self.areas)
        # one step: coverage 1.0 -> 0.8, keeping the 8 highest
        assert coverage_of(out, self.areas) == pytest.approx(0.8)
        assert np.array_equal(np.where(out.values == 0.0)[0], [0, 1])

    def test_does_not_overshoot_target(self):
        design = DesignVector(
            np.array([1.0] * 5 + [0.0] * 5), self.frozen
        )
        alpha = np.arange(10, dtype=float)
        cfg = BesoConfig(ER=0.9, AR=0.05, target_coverage=0.4)
        out = beso_step(design, alpha, cfg, self.areas)
        assert coverage_of(out, self.areas) == pytest.approx(0.4)

    def test_admission_cap(self):
        # void elements with huge sensitivity may re-enter only AR worth
        design = DesignVector(np.array([1.0] * 5 + [0.0] * 5), self.frozen)
        alpha = np.array([1.0] * 5 + [100.0] * 5)
        cfg = BesoConfig(ER=0.05, AR=0.1, target_coverage=0.5)
        out = beso_step(design, alpha, cfg, self.areas)
        added = np.sum(out.values[5:])
        assert added <= 1.0 + 1e-12  # 10 % of total area = one element

    def test_frozen_always_kept(self):
        frozen = np.zeros(10, dtype=bool)
        frozen[0] = True
        design = DesignVector(np.ones(10), frozen)
        alpha = np.arange(10, dtype=float)  # frozen element ranks worst
        cfg = BesoConfig(ER=0.5, AR=0.1, target_coverage=0.2)
        out = beso_step(design, alpha, cfg, self.areas)
        assert out.values[0] == 1.0

    def test_deterministic_tie_break(self):
        design = DesignVector(np.ones(10), self.frozen)
        alpha = np.zeros(10)  # full tie: lower index wins
        cfg = BesoConfig(ER=0.3, AR=0.1, target_coverage=0.5)
        out = beso_step(design, alpha, cfg, self.areas)
        assert np.array_equal(out.values, [1, 1, 1, 1, 1, 1, 1, 0, 0, 0])


class TestRelativeEnergyDensity:
    def test_value(self):
        assert relative_energy_density(2.0, 0.5, 4.0, 1.0) == pytest.approx(1.0)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            relative_energy_density(1.0, 0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            relative_energy_density(1.0, 1.0, 0.0, 1.0)


@pytest.fixture(scope="module")
def result(tiny):
    cfg = BesoConfig(ER=0.1, AR=0.05, target_coverage=1.0 / 3.0)
    return optimize(tiny, cfg)


class TestOptimize:
    def test_reaches_budget_within_one_element(self, tiny, result):
        areas = tiny.garment.rest_areas
        cov = coverage_of(result.design, areas)
        assert abs(cov - 1.0 / 3.0) * np.sum(areas) <= areas.max() + 1e-12

    def test_design_is_binary_and_frozen_kept(self, tiny, result):
        vals = result.design.values
        assert set(np.unique(vals)) <= {0.0, 1.0}
        assert np.all(vals[tiny.frozen_elements] == 1.0)

    def test_progress_and_snapshots_recorded(self, result):
        assert len(result.progress) == len(result.snapshots)
        for i, rec in enumerate(result.progress):
            assert rec.iteration == i
            assert rec.snapshot_id == i
            assert rec.solver_converged
        covs = [rec.coverage for rec in result.progress]
        assert covs[0] == pytest.approx(1.0)
        assert all(a >= b - 1e-12 for a, b in zip(covs, covs[1:]))

    def test_gap_widens_as_material_focuses(self, result):
        # the normalized ON-OFF gap per reinforced area must improve as
        # reinforcement concentrates onto the load path
        first, last = result.progress[0], result.progress[-1]
        gap_density_first = first.objective / first.coverage
        gap_density_last = last.objective / last.coverage
        assert gap_density_last > gap_density_first

    def test_deterministic(self, tiny, result):
        cfg = BesoConfig(ER=0.1, AR=0.05, target_coverage=1.0 / 3.0)
        again = optimize(tiny, cfg)
        assert len(again.snapshots) == len(result.snapshots)
        for a, b in zip(again.snapshots, result.snapshots):
            assert np.array_equal(a, b)
        assert again.progress[-1].objective == result.progress[-1].objective

    def test_resume_matches_uninterrupted(self, tiny, result):
        cfg = BesoConfig(ER=0.1, AR=0.05, target_coverage=1.0 / 3.0)
        # stop after 3 recorded iterations, then resume by redoing the
        # third (its snapshot was taken before the update step)
        cut = 3
        resumed = optimize(
            tiny,
            cfg,
            initial=DesignVector(
                result.snapshots[cut - 1].copy(), tiny.frozen_elements.copy()
            ),
            normalization=result.normalization,
            filter_history=[h.copy() for h in result.filter_history[: cut - 1]],
            start_iteration=cut - 1,
            progress=result.progress[: cut - 1],
            snapshots=[s.copy() for s in result.snapshots[: cut - 1]],
        )
        assert len(resumed.snapshots) == len(result.snapshots)
        for a, b in zip(resumed.snapshots, result.snapshots):
            assert np.array_equal(a, b)
        assert resumed.progress[-1].objective == pytest.approx(
            result.progress[-1].objective, rel=1e-12
        )


class TestCrossMatrix:
    def test_table_shape_and_dense_reference(self, tiny):
        dense = DesignVector(
            np.ones(tiny.garment.num_elements), tiny.frozen_elements.copy()
        )
        half_vals = (np.arange(tiny.garment.num_elements) < 6).astype(float)
        half_vals[tiny.frozen_elements] = 1.0
        half = DesignVector(half_vals, tiny.frozen_elements.copy())
        out = evaluate_cross_matrix([dense, half], tiny, design_labels=["dense", "half"])
        assert out["rho"].shape == (2, 1)
        assert out["row_labels"] == ["dense", "half"]
        assert out["column_labels"] == ["stretch"]
        assert np.all(out["converged"])
        # the dense design compared with itself scores exactly 1
        assert out["rho"][0, 0] == pytest.approx(1.0, rel=1e-12)


class TestDiagnostics:
    def test_dense_design_single_component(self, tiny):
        design = DesignVector(
            np.ones(tiny.garment.num_elements), tiny.frozen_elements.copy()
        )
        diag = structural_diagnostics(design, tiny)
        assert diag["num_components"] == 1
        assert diag["islands"] == []
        assert diag["unanchored_clutches"] == []
        assert diag["reinforced_elements"] == tiny.garment.num_elements

    def test_detects_island_and_bare_clutch(self, tiny):
        vals = np.zeros(tiny.garment.num_elements)
        # a reinforced element away from anchors and clutch endpoints
        anchored = set()
        for coup in tiny.attachments.clutch_couplings:
            anchored.update(int(e) for e in coup.elements)
        anchor_verts = set(int(v) for v in tiny.attachments.garment_vertices)
        for e in range(tiny.garment.num_elements):
            if e in anchored:
                continue
            if any(int(v) in anchor_verts for v in tiny.garment.triangles[e]):
                continue
            vals[e] = 1.0
            break
        design = DesignVector(vals, np.zeros_like(vals, dtype=bool))
        diag = structural_diagnostics(design, tiny)
        assert len(diag["islands"]) == 1
        assert diag["unanchored_clutches"] == [0]

    def test_load_paths_top_decile(self, tiny):
        design = np.ones(tiny.garment.num_elements)
        states = solve_all_states(tiny, design, [np.ones(1)])
        paths = load_paths(tiny, states, fraction=0.25)
        idx = paths[(0, "ON")]
        assert len(idx) == 3  # ceil(0.25 * 12)
        W = states[(0, "ON")].breakdown.garment_densities
        assert set(idx) == set(np.argsort(-W)[:3])


class TestDualObjective:
    def test_matches_manual_sum(self, tiny):
        design = np.ones(tiny.garment.num_elements)
        states = solve_all_states(tiny, design, [np.ones(1), np.zeros(1)])
        factors = np.array([2.0])
        obj, per_pose = dual_objective(states, tiny, factors, None)
        e_on = states[(0, "ON")].breakdown.E_garment
        e_off = states[(0, "OFF")].breakdown.E_garment
        assert obj == pytest.approx(2.0 * (e_on - e_off))
        assert per_pose == [obj]

    def test_reinforced_area(self, tiny):
        areas = tiny.garment.rest_areas
        d = DesignVector(np.ones(len(areas)), tiny.frozen_elements.copy())
        assert reinforced_area(d, areas) == pytest.approx(np.sum(areas))
