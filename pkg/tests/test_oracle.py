import numpy as np
import pytest

from voltdual.errors import DivergenceError
from voltdual.oracle import exact_relaxation_check, oracle_solve_P3
from voltdual.problem import DeviceSetpoints
from voltdual.scenario import build_problem, preset_config

from oracles import cvxpy_relaxed_optimum, random_instance


def test_toy1_closed_form():
    # curtail until v = 1.005: p = 0.5, multiplier 2 c_p (1 - p) / r = 300
    prob = build_problem(preset_config("toy1"))
    res = oracle_solve_P3(prob)
    assert res.z.p[0] == pytest.approx(0.5, rel=1e-6)
    assert res.z.q[0] == pytest.approx(0.0, abs=1e-9)
    assert res.dual.mu_hi[0] == pytest.approx(300.0, rel=1e-3)
    assert res.dual.mu_lo[0] == 0.0
    assert res.value == pytest.approx(0.75, rel=1e-6)
    assert res.dual_value == pytest.approx(res.value, rel=1e-6)


def test_inactive_limits_give_zero_multipliers():
    prob = build_problem(preset_config("toy1"))
    loose = prob.with_model(prob.model.with_limits(0.8, 1.2))
    res = oracle_solve_P3(loose)
    assert np.all(res.dual.stacked == 0)
    assert res.iterations == 1
    assert res.value == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_conic_solver(seed):
    prob = random_instance(seed)
    res = oracle_solve_P3(prob)
    p, q, c, val = cvxpy_relaxed_optimum(prob)
    assert res.value == pytest.approx(val, rel=1e-6, abs=1e-9)
    np.testing.assert_allclose(res.v, prob.voltage(DeviceSetpoints(p, q, c)), atol=1e-6)
    assert res.max_violation < 1e-9


def test_exact_relaxation_against_independent_optimum():
    prob = random_instance(4)
    res = oracle_solve_P3(prob)
    p, q, c, _ = cvxpy_relaxed_optimum(prob)
    assert exact_relaxation_check(prob, res) < 1e-6
    assert exact_relaxation_check(prob, res, DeviceSetpoints(p, q, c)) < 1e-5


def test_infeasible_instance_stalls():
    prob = build_problem(preset_config("toy1"))
    # even zero output leaves the voltage at 1.0 > 0.99
    bad = prob.with_model(prob.model.with_limits(0.8, 0.99))
    with pytest.raises(DivergenceError):
        oracle_solve_P3(bad, max_iter=2000)
