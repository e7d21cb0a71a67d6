import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voltdual.errors import DivergenceError, ParameterError, ShapeError, TopologyError
from voltdual.grid import (
    FeederTopology,
    Line,
    LinearGridModel,
    NetworkState,
    ac_power_flow,
    build_linear_model,
    constraint_residual,
    export_model_csv,
    linear_voltage,
)

from oracles import path_enumeration_R, random_tree, sweep_two_node, topology_from_edges


def chain(r=(0.01, 0.02), x=(0.0, 0.0), v0=1.0):
    lines = tuple(Line(i, i + 1, ri, xi) for i, (ri, xi) in enumerate(zip(r, x)))
    return FeederTopology(tuple(str(i) for i in range(len(r) + 1)), lines, v0=v0)


class TestBuildLinearModel:
    def test_two_node_chain(self):
        m = build_linear_model(chain())
        np.testing.assert_allclose(m.R, [[0.01, 0.01], [0.01, 0.03]], atol=1e-15)
        np.testing.assert_allclose(m.X, 0.0)
        np.testing.assert_allclose(m.a, [1.0, 1.0])

    def test_zero_impedance(self):
        m = build_linear_model(chain(r=(0.0,), x=(0.0,), v0=1.02))
        assert np.all(m.R == 0) and np.all(m.X == 0)
        np.testing.assert_allclose(m.a, [1.02])

    def test_scales_with_v0(self):
        m = build_linear_model(chain(v0=2.0))
        np.testing.assert_allclose(m.R, [[0.005, 0.005], [0.005, 0.015]])

    def test_branching_lines_in_any_order(self):
        # 0 -> 2 -> 1, 2 -> 3, listed child-first and reversed
        topo = FeederTopology(("s", "a", "b", "c"), (Line(1, 2, 0.02, 0.01), Line(2, 3, 0.03, 0.0), Line(0, 2, 0.01, 0.01)))
        m = build_linear_model(topo)
        edges = [(0, 2, 0.01, 0.01), (2, 1, 0.02, 0.01), (2, 3, 0.03, 0.0)]
        np.testing.assert_allclose(m.R, path_enumeration_R(edges, 3), atol=1e-15)
        np.testing.assert_allclose(m.X, path_enumeration_R(edges, 3, field=3), atol=1e-15)

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(1, 30), seed=st.integers(0, 2**32 - 1), v0=st.floats(0.9, 1.1))
    def test_matches_path_enumeration(self, n, seed, v0):
        edges = random_tree(np.random.default_rng(seed), n)
        m = build_linear_model(topology_from_edges(edges, n, v0=v0))
        R = path_enumeration_R(edges, n, v0)
        X = path_enumeration_R(edges, n, v0, field=3)
        np.testing.assert_allclose(m.R, R, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(m.X, X, rtol=1e-12, atol=1e-15)
        assert np.array_equal(m.R, m.R.T) or np.allclose(m.R, m.R.T, rtol=0, atol=1e-15)
        assert np.all(m.R >= 0) and np.all(m.X >= 0)
        # path nesting: the diagonal dominates its row
        assert np.all(np.diag(m.R)[:, None] >= m.R - 1e-15)

    def test_cycle_rejected(self):
        lines = (Line(0, 1, 0.01, 0), Line(1, 2, 0.01, 0), Line(2, 1, 0.01, 0))
        with pytest.raises(TopologyError):
            FeederTopology(("0", "1", "2", "3"), lines)

    def test_disconnected_rejected(self):
        lines = (Line(0, 1, 0.01, 0), Line(2, 3, 0.01, 0), Line(3, 2, 0.01, 0))
        with pytest.raises(TopologyError):
            FeederTopology(("0", "1", "2", "3"), lines)

    def test_wrong_line_count_rejected(self):
        with pytest.raises(TopologyError):
            FeederTopology(("0", "1", "2"), (Line(0, 1, 0.01, 0),))

    def test_bad_parameters(self):
        with pytest.raises(ParameterError):
            chain(v0=0.0)
        with pytest.raises(ParameterError):
            chain(r=(-0.01, 0.01))


class TestLinearVoltage:
    def test_hand_example(self):
        m = build_linear_model(chain())
        np.testing.assert_allclose(linear_voltage(m, [0.0, 0.5], [0.0, 0.0]), [1.005, 1.015], atol=1e-15)

    def test_zero_injection_gives_offset(self):
        m = build_linear_model(chain(x=(0.01, 0.01)))
        np.testing.assert_array_equal(linear_voltage(m, np.zeros(2), np.zeros(2)), m.a)

    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(0, 2**32 - 1),
        t=st.floats(0, 1),
    )
    def test_affine(self, seed, t):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 12))
        m = build_linear_model(topology_from_edges(random_tree(rng, n), n))
        p, q, p2, q2 = rng.normal(size=(4, n))
        lhs = linear_voltage(m, t * p + (1 - t) * p2, t * q + (1 - t) * q2)
        rhs = t * linear_voltage(m, p, q) + (1 - t) * linear_voltage(m, p2, q2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
        np.testing.assert_allclose(linear_voltage(m, 2 * p, 2 * q) - m.a, 2 * (linear_voltage(m, p, q) - m.a), atol=1e-12)

    def test_shape_mismatch(self):
        m = build_linear_model(chain())
        with pytest.raises(ShapeError):
            linear_voltage(m, [0.0], [0.0, 0.0])

    def test_network_state_recomputes(self):
        m = build_linear_model(chain())
        s = NetworkState.assemble(m, [0.0, 0.1], 0.0, [0.0, 0.4], 0.0)
        np.testing.assert_allclose(s.v, [1.005, 1.015])
        s2 = NetworkState(m, s.p * 2, s.q)
        np.testing.assert_allclose(s2.v - m.a, 2 * (s.v - m.a))


class TestACPowerFlow:
    def test_zero_injection_exact(self):
        topo = chain(r=(0.01, 0.02), x=(0.01, 0.03), v0=1.03)
        assert np.array_equal(ac_power_flow(topo, np.zeros(2), np.zeros(2)), np.full(2, 1.03))

    def test_two_node_closed_form(self):
        # V^2 - V + 0.01 = 0 for a 1 p.u. load through r = 0.01
        v = ac_power_flow(chain(r=(0.01,), x=(0.0,)), [-1.0], [0.0], tolerance=1e-12)
        assert v[0] == pytest.approx(0.9898979485566356, abs=1e-10)
        assert v[0] == pytest.approx(sweep_two_node(0.01, 0.0, -1.0, 0.0), abs=1e-10)

    @pytest.mark.parametrize("p,q", [(0.3, 0.1), (-0.5, -0.2), (0.8, -0.4)])
    def test_matches_independent_sweep(self, p, q):
        v = ac_power_flow(chain(r=(0.02,), x=(0.04,)), [p], [q], tolerance=1e-12)
        assert v[0] == pytest.approx(sweep_two_node(0.02, 0.04, p, q), abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_power_balance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 15))
        edges = random_tree(rng, n)
        topo = topology_from_edges(edges, n)
        p, q = rng.uniform(-0.1, 0.1, size=(2, n))
        from voltdual.grid import ac_power_flow_complex

        V = np.concatenate([[1.0 + 0j], ac_power_flow_complex(topo, p, q, 1e-13, 1000)])
        # current injections from branch currents
        inj = np.zeros(n + 1, dtype=complex)
        for par, ch, r, x in edges:
            i_line = (V[par] - V[ch]) / complex(r, x)
            inj[ch] -= i_line
            inj[par] += i_line
        s = V[1:] * np.conj(inj[1:])
        np.testing.assert_allclose(s.real, p, atol=1e-10)
        np.testing.assert_allclose(s.imag, q, atol=1e-10)

    def test_small_injections_close_to_linear(self):
        topo = chain(r=(0.01, 0.02), x=(0.01, 0.02))
        m = build_linear_model(topo)
        rng = np.random.default_rng(0)
        for _ in range(50):
            p, q = rng.uniform(-0.05, 0.05, size=(2, 2))
            assert np.max(np.abs(ac_power_flow(topo, p, q) - linear_voltage(m, p, q))) <= 0.005

    def test_collapse_raises(self):
        with pytest.raises(DivergenceError):
            ac_power_flow(chain(r=(0.1,), x=(0.1,)), [-10.0], [-10.0])


class TestConstraintResidual:
    def setup_method(self):
        self.m = LinearGridModel(np.eye(2) * 0.01, np.zeros((2, 2)), 1.0, 0.95, 1.05)

    def test_interior_negative(self):
        assert np.all(constraint_residual(self.m, [1.0, 1.0]) < 0)

    def test_active_boundary(self):
        g = constraint_residual(self.m, [1.0, 1.05])
        assert g[3] == 0.0

    def test_upper_violation(self):
        g = constraint_residual(self.m, [1.06, 1.0])
        assert g[2] == pytest.approx(0.01, abs=1e-12)
        assert g[0] == pytest.approx(-0.11, abs=1e-12)

    def test_shape(self):
        with pytest.raises(ShapeError):
            constraint_residual(self.m, [1.0])


def test_model_validation():
    with pytest.raises(ParameterError):
        LinearGridModel(np.eye(2), np.eye(2), 1.0, 1.05, 0.95)
    with pytest.raises(ShapeError):
        LinearGridModel(np.eye(2), np.eye(3), 1.0, 0.95, 1.05)


def test_export_csv(tmp_path):
    m = build_linear_model(chain(x=(0.01, 0.02)))
    paths = export_model_csv(m, tmp_path, ["a", "b"])
    assert {p.name for p in paths} == {"R.csv", "X.csv", "a.csv"}
    R = np.loadtxt(tmp_path / "R.csv", delimiter=",", skiprows=1, usecols=(1, 2))
    np.testing.assert_allclose(R, m.R)
