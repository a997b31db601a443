import numpy as np
import pytest

import flange_balance as fb
from flange_balance.jointmodel import GasketCurve
from flange_balance.solver import (
    NonConvergenceError,
    SolverError,
    analyse,
    apply_external,
    apply_pretension,
    equilibrium_residual,
    gasket_force,
    gasket_tangent_matrix,
    sector_weights,
    tangent_stiffness,
)
from conftest import single_bolt_joint, with_gasket

STIFF_LINEAR = GasketCurve.linear(1e-3, 1e8)  # 1e11 Pa/m, stays closed under moderate moments


def station_quadrature(layout):
    """Per (station, radial node): area weight, radius and angle."""
    A = np.tile(layout.area_weights, layout.n_stations)
    r = np.tile(layout.radial_nodes, layout.n_stations)
    theta = np.repeat(layout.station_angles, len(layout.radial_nodes))
    return A, r, theta


def gasket_resultants(layout, state, plane_angle=0.0):
    """Total gasket force and its moment about the axis normal to the moment plane."""
    A, r, theta = station_quadrature(layout)
    s = layout.gasket.stress(state.field.closures).ravel()
    return float(np.sum(s * A)), float(np.sum(s * A * r * np.cos(theta - plane_angle)))


@pytest.fixture(scope="module")
def linear_joint(sample):
    return fb.build_joint(with_gasket(sample[0], STIFF_LINEAR))


class TestSectorWeights:
    def test_rows_sum_to_one(self, sample):
        g = sample[0].geometry
        W = sector_weights(g.bolt_angles, g.station_angles)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, rtol=1e-14)

    def test_each_station_fully_shared(self, sample):
        # every station's tributary arc is split among the sectors it overlaps
        g = sample[0].geometry
        W = sector_weights(g.bolt_angles, g.station_angles)
        np.testing.assert_allclose(W.sum(axis=0) * g.n_sectors / g.n_bolts, 1.0, rtol=1e-12)

    def test_one_station_per_bolt(self):
        angles = np.arange(4) * np.pi / 2
        np.testing.assert_allclose(sector_weights(angles, angles), np.eye(4), atol=1e-15)


class TestPretension:
    def test_zero_preloads(self, sample_joint):
        se, layout = sample_joint
        state = apply_pretension(se, layout, np.zeros(layout.n_bolts))
        assert not state.u.any()
        assert not state.field.stress_per_sector.any()
        assert equilibrium_residual(state, se, layout) == 0.0

    def test_uniform_preload_symmetric_model(self, sample, nominal_preloads):
        se, layout = fb.build_joint(sample[0].with_sectors(8))
        state = apply_pretension(se, layout, nominal_preloads)
        c = state.field.closures
        cv = c.std(axis=0) / c.mean(axis=0)
        assert np.all(cv <= 1e-8)

    def test_single_bolt_gasket_carries_preload(self):
        se, layout = single_bolt_joint(GasketCurve([(0.0, 0.0), (1e-4, 5e6), (3e-4, 45e6)]))
        state = apply_pretension(se, layout, [20e3])
        total = float(np.sum(layout.station_areas() * layout.gasket.stress(state.field.closures.ravel())))
        assert total == pytest.approx(20e3, rel=1e-10)
        assert state.bolt_forces[0] == pytest.approx(20e3, rel=1e-10)

    def test_bolt_forces_equal_preloads(self, sample_joint, nominal_preloads):
        se, layout = sample_joint
        P = nominal_preloads * np.linspace(0.8, 1.2, 8)
        state = apply_pretension(se, layout, P)
        np.testing.assert_allclose(state.bolt_forces, P, rtol=1e-9)

    def test_lock_lengths_reproduce_bolt_law(self, sample_joint, nominal_preloads):
        # bolt force is the bolt spring stretch times its stiffness
        se, layout = sample_joint
        state = apply_pretension(se, layout, nominal_preloads)
        np.testing.assert_allclose(state.lock_lengths, -state.u[layout.bolt_dofs])

    def test_negative_preload_rejected(self, sample_joint):
        se, layout = sample_joint
        with pytest.raises(ValueError, match="non-negative"):
            apply_pretension(se, layout, -np.ones(layout.n_bolts))

    def test_non_convergence_carries_history(self, sample_joint, nominal_preloads):
        se, layout = sample_joint
        with pytest.raises(NonConvergenceError) as err:
            apply_pretension(se, layout, nominal_preloads, max_newton=1)
        assert len(err.value.residual_history) == 2
        assert err.value.contact_flags is not None


class TestExternal:
    def test_no_load_leaves_state_unchanged(self, sample_joint, nominal_preloads):
        se, layout = sample_joint
        s1 = apply_pretension(se, layout, nominal_preloads)
        s2 = apply_external(s1, se, layout)
        assert np.linalg.norm(s2.u - s1.u) <= 1e-10 * np.linalg.norm(s1.u)
        np.testing.assert_allclose(s2.bolt_forces, s1.bolt_forces, rtol=1e-10)

    @pytest.mark.parametrize("plane_angle", [0.0, 0.3, np.pi / 2])
    def test_pure_moment_balance(self, sample_joint, nominal_preloads, plane_angle):
        se, layout = sample_joint
        M = 9600.0
        s1 = apply_pretension(se, layout, nominal_preloads)
        s2 = apply_external(s1, se, layout, 0.0, M, plane_angle)
        dF = s2.bolt_forces - s1.bolt_forces
        G1, _ = gasket_resultants(layout, s1, plane_angle)
        G2, m_gasket = gasket_resultants(layout, s2, plane_angle)
        # axial: bolt tension gained equals gasket compression lost
        assert abs(dF.sum() - (G2 - G1)) <= 1e-8 * nominal_preloads.sum()
        m_bolts = float(np.sum(dF * layout.bolt_circle_radius * np.cos(layout.bolt_angles - plane_angle)))
        assert m_bolts - m_gasket == pytest.approx(M, rel=1e-6)

    def test_axial_load_balance(self, sample_joint, nominal_preloads):
        se, layout = sample_joint
        s1 = apply_pretension(se, layout, nominal_preloads)
        s2 = apply_external(s1, se, layout, 200e3, 0.0)
        G2, _ = gasket_resultants(layout, s2)
        assert s2.bolt_forces.sum() - G2 == pytest.approx(200e3, rel=1e-8)

    def test_moment_response_is_antisymmetric(self, linear_joint, nominal_preloads):
        se, layout = linear_joint
        s1 = apply_pretension(se, layout, nominal_preloads)
        s2 = apply_external(s1, se, layout, 0.0, 2000.0, 0.0)
        assert s2.field.closures.min() > 0  # the linear regime holds everywhere
        dF = s2.bolt_forces - s1.bolt_forces
        # bolts at theta and pi - theta: 22.5 <-> 157.5, 67.5 <-> 112.5, ...
        mirror = [3, 2, 1, 0, 7, 6, 5, 4]
        np.testing.assert_allclose(dF, -dF[mirror], atol=1e-6 * np.abs(dF).max())

    def test_moment_lifts_the_plane_side(self, sample_joint, nominal_preloads):
        se, layout = sample_joint
        s2 = analyse(se, layout, nominal_preloads, 0.0, 9600.0, 0.0)
        gs = s2.field.stress_at_external_radius
        assert gs[0] < gs[3]
        assert s2.bolt_forces[0] > s2.bolt_forces[3]

    def test_example_loads_open_the_joint(self, sample_joint, sample, nominal_preloads):
        _, loads = sample
        se, layout = sample_joint
        state = analyse(se, layout, nominal_preloads, loads.axial_load, loads.bending_moment)
        assert state.field.lost_contact_count >= 1
        assert np.all(state.field.stress_per_sector[~state.field.contact_flags] == 0.0)

    def test_missing_rotation_dofs(self):
        se, layout = single_bolt_joint(STIFF_LINEAR)
        state = apply_pretension(se, layout, [1e4])
        with pytest.raises(SolverError, match="rotation"):
            apply_external(state, se, layout, 0.0, 10.0)


class TestResidual:
    def test_converged(self, sample_joint, sample, nominal_preloads):
        _, loads = sample
        se, layout = sample_joint
        state = analyse(se, layout, nominal_preloads, loads.axial_load, loads.bending_moment)
        assert equilibrium_residual(state, se, layout) <= 1e-8

    def test_perturbed(self, sample_joint, nominal_preloads):
        se, layout = sample_joint
        state = apply_pretension(se, layout, nominal_preloads)
        state.u[layout.gasket_dofs[5]] += 1e-3
        assert equilibrium_residual(state, se, layout) > 1e-4

    def test_zero(self, sample_joint):
        se, layout = sample_joint
        state = apply_pretension(se, layout, np.zeros(layout.n_bolts))
        assert equilibrium_residual(state, se, layout, np.zeros(se.n_masters)) == 0.0


def breakpoint_distance(curve, c):
    knots = np.asarray(curve.closures)
    return np.min(np.abs(c.ravel()[:, None] - knots[None, :]))


class TestTangent:
    def test_matches_finite_differences(self, sample_joint, sample, nominal_preloads, rng):
        _, loads = sample
        se, layout = sample_joint
        base = analyse(se, layout, nominal_preloads, loads.axial_load, loads.bending_moment).u
        scale = np.abs(base).max()
        h = 1e-8 * scale
        checked = 0
        while checked < 5:
            u = base + rng.normal(scale=0.05 * scale, size=base.size)
            if breakpoint_distance(layout.gasket, layout.closures(u)) < 1e3 * h:
                continue
            T = gasket_tangent_matrix(layout, u)
            fd = np.empty_like(T)
            for j in range(u.size):
                e = np.zeros_like(u)
                e[j] = h
                fd[:, j] = (gasket_force(layout, u + e) - gasket_force(layout, u - e)) / (2 * h)
            assert np.linalg.norm(fd - T) <= 1e-5 * np.linalg.norm(T)
            checked += 1

    def test_full_tangent_includes_structure(self, sample_joint, nominal_preloads):
        se, layout = sample_joint
        u = apply_pretension(se, layout, nominal_preloads).u
        np.testing.assert_allclose(tangent_stiffness(se, layout, u) - se.K_reduced, gasket_tangent_matrix(layout, u))

    def test_open_stations_carry_no_stiffness(self, sample_joint):
        se, layout = sample_joint
        u = np.zeros(se.n_masters)
        u[layout.gasket_dofs] = 1e-4  # pulled apart everywhere
        assert not gasket_tangent_matrix(layout, u).any()
        assert not gasket_force(layout, u).any()


class TestDeterminism:
    def test_bit_identical_states(self, sample_joint, sample, nominal_preloads):
        _, loads = sample
        se, layout = sample_joint
        a = analyse(se, layout, nominal_preloads, loads.axial_load, loads.bending_moment)
        b = analyse(se, layout, nominal_preloads, loads.axial_load, loads.bending_moment)
        assert a.u.tobytes() == b.u.tobytes()
        assert a.bolt_forces.tobytes() == b.bolt_forces.tobytes()
        assert a.field.closures.tobytes() == b.field.closures.tobytes()
