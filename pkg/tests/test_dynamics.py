import numpy as np
import numpy.testing as npt
import pytest

from ecfcontrol.dynamics import (
    LtiSystem,
    PolytopeConstraints,
    build_time_varying_halfspaces,
    concatenate,
)
from ecfcontrol.errors import ConfigurationError


def _loop_states(A, B, G, x0, us, ws):
    # independent oracle: step the recursion one state at a time
    xs = [np.asarray(x0, dtype=float)]
    for k in range(len(us)):
        xs.append(A @ xs[-1] + B @ us[k] + G @ ws[k])
    return np.concatenate(xs)


def _double_integrator(dt=0.25, horizon=10):
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[dt**2 / 2.0], [dt]])
    G = np.eye(2)
    return LtiSystem(A, B, G, horizon=horizon, u_min=[-100.0], u_max=[100.0], dt=dt)


class TestLtiSystem:
    def test_dimensions_recorded(self):
        sys = _double_integrator()
        assert sys.n_states == 2
        assert sys.n_inputs == 1
        assert sys.n_dist == 2
        assert sys.horizon == 10

    def test_rejects_nonsquare_a(self):
        with pytest.raises(ConfigurationError):
            LtiSystem(np.ones((2, 3)), np.ones((2, 1)), np.eye(2), 3, [-1], [1])

    def test_rejects_mismatched_b_rows(self):
        with pytest.raises(ConfigurationError):
            LtiSystem(np.eye(2), np.ones((3, 1)), np.eye(2), 3, [-1], [1])

    def test_rejects_mismatched_g_rows(self):
        with pytest.raises(ConfigurationError):
            LtiSystem(np.eye(2), np.ones((2, 1)), np.eye(3), 3, [-1], [1])

    def test_rejects_bad_horizon(self):
        with pytest.raises(ConfigurationError):
            LtiSystem(np.eye(2), np.ones((2, 1)), np.eye(2), 0, [-1], [1])

    def test_rejects_crossed_bounds(self):
        with pytest.raises(ConfigurationError):
            LtiSystem(np.eye(2), np.ones((2, 1)), np.eye(2), 3, [2.0], [1.0])

    def test_scalar_bounds_broadcast(self):
        sys = LtiSystem(np.eye(2), np.ones((2, 2)), np.eye(2), 3, -1.0, 1.0)
        npt.assert_array_equal(sys.u_min, [-1.0, -1.0])
        npt.assert_array_equal(sys.u_max, [1.0, 1.0])


class TestConcatenate:
    def test_identity_system_blocks(self):
        # A = I, B = 0, G = I over one step: stacked map is [I; I] and the
        # disturbance enters only the second block row
        sys = LtiSystem(np.eye(2), np.zeros((2, 1)), np.eye(2), 1, [-1], [1])
        csys = concatenate(sys)
        npt.assert_array_equal(csys.Abar, np.vstack([np.eye(2), np.eye(2)]))
        npt.assert_array_equal(csys.Bbar, np.zeros((4, 1)))
        npt.assert_array_equal(csys.Gbar[:2, :], np.zeros((2, 2)))
        npt.assert_array_equal(csys.Gbar[2:, :], np.eye(2))

    def test_double_integrator_second_power_block(self):
        csys = concatenate(_double_integrator(dt=0.25))
        block = csys.Abar[4:6, :]
        npt.assert_allclose(block, np.array([[1.0, 0.5], [0.0, 1.0]]), rtol=0, atol=1e-15)

    def test_first_block_row_is_identity_and_zero(self):
        sys = _double_integrator()
        csys = concatenate(sys)
        npt.assert_array_equal(csys.Abar[:2, :], np.eye(2))
        npt.assert_array_equal(csys.Bbar[:2, :], np.zeros((2, 10)))
        npt.assert_array_equal(csys.Gbar[:2, :], np.zeros((2, 20)))

    def test_strict_block_lower_triangle_is_exactly_zero(self):
        rng = np.random.default_rng(3)
        n, m, p, N = 3, 2, 2, 5
        sys = LtiSystem(rng.normal(size=(n, n)), rng.normal(size=(n, m)),
                        rng.normal(size=(n, p)), N, -np.ones(m), np.ones(m))
        csys = concatenate(sys)
        for k in range(N + 1):
            for j in range(k, N):
                npt.assert_array_equal(csys.Bbar[k * n:(k + 1) * n, j * m:(j + 1) * m],
                                       np.zeros((n, m)))
                npt.assert_array_equal(csys.Gbar[k * n:(k + 1) * n, j * p:(j + 1) * p],
                                       np.zeros((n, p)))

    def test_matches_loop_simulation(self):
        rng = np.random.default_rng(11)
        A = rng.normal(size=(3, 3))
        B = rng.normal(size=(3, 2))
        G = rng.normal(size=(3, 1))
        sys = LtiSystem(A, B, G, 4, -np.ones(2), np.ones(2))
        csys = concatenate(sys)
        x0 = rng.normal(size=3)
        us = rng.normal(size=(4, 2))
        ws = rng.normal(size=(4, 1))
        xbar = csys.Abar @ x0 + csys.Bbar @ us.ravel() + csys.Gbar @ ws.ravel()
        expected = _loop_states(A, B, G, x0, us, ws)
        npt.assert_allclose(xbar, expected, rtol=1e-12, atol=1e-12)

    def test_matches_loop_simulation_many_shapes(self):
        rng = np.random.default_rng(2024)
        for trial in range(100):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 5))
            p = int(rng.integers(1, 5))
            N = int(rng.integers(1, 7))
            A = rng.normal(size=(n, n))
            B = rng.normal(size=(n, m))
            G = rng.normal(size=(n, p))
            sys = LtiSystem(A, B, G, N, -np.ones(m), np.ones(m))
            csys = concatenate(sys)
            x0 = rng.normal(size=n)
            us = rng.normal(size=(N, m))
            ws = rng.normal(size=(N, p))
            xbar = csys.Abar @ x0 + csys.Bbar @ us.ravel() + csys.Gbar @ ws.ravel()
            expected = _loop_states(A, B, G, x0, us, ws)
            scale = max(1.0, np.abs(expected).max())
            assert np.abs(xbar - expected).max() <= 1e-12 * scale

    def test_simulate_helper_agrees_with_loop(self):
        sys = _double_integrator()
        rng = np.random.default_rng(5)
        x0 = rng.normal(size=2)
        us = rng.normal(size=(10, 1))
        ws = rng.normal(size=(10, 2))
        states = sys.simulate(x0, us, ws)
        assert states.shape == (11, 2)
        expected = _loop_states(sys.A, sys.B, sys.G, x0, us, ws)
        npt.assert_allclose(states.ravel(), expected, rtol=1e-12, atol=1e-12)


class TestPolytopeConstraints:
    def test_shapes_and_margins(self):
        P = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, -1.0, 0.0, 0.0]])
        q = np.array([2.0, 3.0])
        con = PolytopeConstraints(P, q)
        assert con.n_rows == 2
        xbar = np.array([1.0, -1.0, 0.0, 0.0])
        npt.assert_allclose(con.margins(xbar), [1.0, 2.0])

    def test_rejects_zero_row(self):
        with pytest.raises(ConfigurationError):
            PolytopeConstraints(np.zeros((1, 4)), np.ones(1))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            PolytopeConstraints(np.ones((2, 4)), np.ones(3))

    def test_stack(self):
        a = PolytopeConstraints(np.eye(3)[:1], np.array([1.0]))
        b = PolytopeConstraints(-np.eye(3)[1:2], np.array([2.0]))
        both = PolytopeConstraints.stack([a, b])
        assert both.n_rows == 2
        npt.assert_array_equal(both.P[0], a.P[0])
        npt.assert_array_equal(both.P[1], b.P[0])


class TestTimeVaryingHalfspaces:
    def test_single_step_lower_bound_row(self):
        # lower bound x1[1] >= -2 * (1 * 0.25) - 50 = -50.5, flipped into a
        # "<=" row with coefficient -1 on that coordinate
        sys = _double_integrator(dt=0.25, horizon=10)
        con = build_time_varying_halfspaces(sys, coord=0, lower=(-2.0, -50.0),
                                            steps=[1])
        assert con.n_rows == 1
        expected_p = np.zeros(22)
        expected_p[2] = -1.0
        npt.assert_array_equal(con.P[0], expected_p)
        npt.assert_allclose(con.q[0], 50.5)

    def test_zero_slope_gives_constant_bound(self):
        sys = _double_integrator()
        con = build_time_varying_halfspaces(sys, coord=1, upper=(0.0, 7.0))
        assert con.n_rows == 10
        npt.assert_allclose(con.q, np.full(10, 7.0))
        for i, k in enumerate(range(1, 11)):
            expected_p = np.zeros(22)
            expected_p[2 * k + 1] = 1.0
            npt.assert_array_equal(con.P[i], expected_p)

    def test_two_sided_corridor_row_count(self):
        sys = _double_integrator()
        con = build_time_varying_halfspaces(sys, coord=0, lower=(-2.0, -50.0),
                                            upper=(2.0, 50.0))
        assert con.n_rows == 20

    def test_include_initial_adds_step_zero(self):
        sys = _double_integrator()
        con = build_time_varying_halfspaces(sys, coord=0, upper=(2.0, 50.0),
                                            include_initial=True)
        assert con.n_rows == 11
        npt.assert_allclose(con.q[0], 50.0)

    def test_rows_agree_with_per_step_scalar_checks(self):
        sys = _double_integrator()
        con = build_time_varying_halfspaces(sys, coord=0, lower=(-2.0, -50.0),
                                            upper=(2.0, 50.0))
        rng = np.random.default_rng(8)
        x0 = rng.normal(size=2)
        us = rng.uniform(-100, 100, size=(10, 1))
        ws = rng.normal(size=(10, 2))
        states = sys.simulate(x0, us, ws)
        xbar = states.ravel()
        satisfied = np.all(con.P @ xbar <= con.q)
        expected = all(
            -2.0 * (k * sys.dt) - 50.0 <= states[k, 0] <= 2.0 * (k * sys.dt) + 50.0
            for k in range(1, 11)
        )
        assert bool(satisfied) == expected

    def test_requires_some_bound(self):
        sys = _double_integrator()
        with pytest.raises(ConfigurationError):
            build_time_varying_halfspaces(sys, coord=0)

    def test_rejects_bad_coord_and_steps(self):
        sys = _double_integrator()
        with pytest.raises(ConfigurationError):
            build_time_varying_halfspaces(sys, coord=5, upper=(0.0, 1.0))
        with pytest.raises(ConfigurationError):
            build_time_varying_halfspaces(sys, coord=0, upper=(0.0, 1.0), steps=[11])
