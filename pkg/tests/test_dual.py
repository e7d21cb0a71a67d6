import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voltdual.dual import (
    DualState,
    SimClock,
    StepsizeSchedule,
    compute_signals,
    dual_ascent_step,
    dual_function_value,
    lagrangian_value,
    residual_at,
    stepsize,
)
from voltdual.errors import ClockError, ParameterError, ShapeError
from voltdual.grid import LinearGridModel
from voltdual.oracle import oracle_solve_P3
from voltdual.scenario import build_problem, preset_config

from oracles import random_instance


@pytest.fixture(scope="module")
def toy2():
    return build_problem(preset_config("toy2"))


class TestAscentStep:
    def test_example(self):
        s = dual_ascent_step(DualState([0.1], [0.0]), [0.2, -0.5], 0.1)
        assert s.mu_lo[0] == pytest.approx(0.12)
        assert s.mu_hi[0] == 0.0

    def test_projection(self):
        s = dual_ascent_step(DualState([0.01], [0.3]), [-1.0, 0.5], 0.1)
        assert s.mu_lo[0] == 0.0
        assert s.mu_hi[0] == pytest.approx(0.35)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), eps=st.floats(1e-4, 10))
    def test_nonnegative_and_nonexpansive(self, seed, eps):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        a, b = (DualState(*rng.exponential(size=(2, n))) for _ in range(2))
        g = rng.normal(size=2 * n)
        sa, sb = dual_ascent_step(a, g, eps), dual_ascent_step(b, g, eps)
        assert np.all(sa.stacked >= 0)
        assert np.linalg.norm(sa.stacked - sb.stacked) <= np.linalg.norm(a.stacked - b.stacked) + 1e-12

    def test_validation(self):
        with pytest.raises(ParameterError):
            dual_ascent_step(DualState.zeros(1), [0, 0], 0.0)
        with pytest.raises(ShapeError):
            dual_ascent_step(DualState.zeros(2), [0, 0], 0.1)
        with pytest.raises(ParameterError):
            DualState([-1.0], [0.0])


class TestSignals:
    def test_example(self):
        m = LinearGridModel(np.array([[0.01]]), np.array([[0.02]]), 1.0, 0.95, 1.05)
        sig = compute_signals(m, DualState([3.0], [1.0]))
        assert sig.alpha == pytest.approx([0.02])
        assert sig.beta == pytest.approx([0.04])

    def test_shape(self):
        m = LinearGridModel(np.eye(2), np.eye(2), 1.0, 0.95, 1.05)
        with pytest.raises(ShapeError):
            compute_signals(m, DualState.zeros(3))


class TestStepsize:
    def test_constant(self):
        assert stepsize(StepsizeSchedule("constant", 0.05), SimClock(7, 3)) == 0.05

    def test_diminishing(self):
        assert stepsize(StepsizeSchedule("diminishing"), SimClock(125, 60)) == 0.5

    def test_frame_zero(self):
        with pytest.raises(ClockError):
            stepsize(StepsizeSchedule("diminishing"), SimClock(5, 60))

    def test_schedule_validation(self):
        with pytest.raises(ParameterError):
            StepsizeSchedule("adaptive")
        with pytest.raises(ParameterError):
            StepsizeSchedule("constant", 0.0)

    def test_clock(self):
        c = SimClock.start(60)
        assert (c.k, c.t, c.m, c.is_slow_update) == (60, 1, 0, True)
        c.advance()
        assert (c.t, c.m, c.is_slow_update) == (1, 1, False)
        with pytest.raises(ClockError):
            SimClock(0, 0)


class TestDualFunction:
    def test_lagrangian(self):
        assert lagrangian_value([1.0, 2.0], [0.1, -0.2], DualState([2.0], [1.0])) == pytest.approx(3.0)
        with pytest.raises(ShapeError):
            lagrangian_value([1.0], [0.1], DualState([2.0], [1.0]))

    def test_at_zero_is_unconstrained_cost(self, toy2):
        assert dual_function_value(toy2, DualState.zeros(2)) == pytest.approx(toy2.total_cost(toy2.cost_minimizers()), abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_concave(self, seed):
        prob = random_instance(seed % 1000)
        rng = np.random.default_rng(seed)
        n = prob.n_nodes
        a, b = rng.exponential(50, (2, 2 * n))
        ha = dual_function_value(prob, DualState.from_stacked(a), 1e-12)
        hb = dual_function_value(prob, DualState.from_stacked(b), 1e-12)
        hm = dual_function_value(prob, DualState.from_stacked((a + b) / 2), 1e-12)
        assert hm >= (ha + hb) / 2 - 1e-8 * (1 + abs(hm))

    def test_gradient_is_residual(self, toy2):
        rng = np.random.default_rng(1)
        mu = rng.exponential(5, 4) + 1.0
        from voltdual.dual import _dual_value_and_minimizer

        _, z = _dual_value_and_minimizer(toy2, DualState.from_stacked(mu), 1e-13)
        g = residual_at(toy2, z)
        for i in range(4):
            e = np.zeros(4)
            e[i] = 1e-5
            fd = (dual_function_value(toy2, DualState.from_stacked(mu + e), 1e-13)
                  - dual_function_value(toy2, DualState.from_stacked(mu - e), 1e-13)) / 2e-5
            assert fd == pytest.approx(g[i], abs=1e-6)

    def test_weak_duality(self, toy2):
        best = oracle_solve_P3(toy2).value
        rng = np.random.default_rng(2)
        for _ in range(100):
            mu = rng.exponential(rng.choice([0.1, 10.0, 1000.0]), 4)
            assert dual_function_value(toy2, DualState.from_stacked(mu)) <= best + 1e-9

    def test_lagrangian_at_minimizer_equals_h(self, toy2):
        from voltdual.dual import _dual_value_and_minimizer

        state = DualState([0.0, 1.0], [2.0, 30.0])
        h, z = _dual_value_and_minimizer(toy2, state, 1e-13)
        lag = lagrangian_value(toy2.total_cost(z), residual_at(toy2, z), state)
        assert lag == pytest.approx(h, abs=1e-10)
