import math

import numpy as np
import pytest

from invlab import catalog
from invlab.hjb_mc import DiscountedProblem, discounted_cost_estimate, value_bound_check
from invlab.paths import ConstantPolicy

U1 = ConstantPolicy((1.0,))


def still_system():
    return catalog.expression_system(2, 1, ["0", "0"], [["0"], ["0"]], [[0.0]])


def test_problem_validation():
    K = catalog.halfspace()
    with pytest.raises(ValueError):
        DiscountedProblem(catalog.inward_drift(), K, C=0.5)
    with pytest.raises(ValueError):
        DiscountedProblem(catalog.inward_drift(), K, T_trunc=5.0)
    assert DiscountedProblem(catalog.inward_drift(), K).tail == pytest.approx(math.exp(-10))


def test_f_indicator():
    prob = DiscountedProblem(catalog.inward_drift(), catalog.halfspace())
    np.testing.assert_array_equal(prob.f(np.array([[-1.0, 0.0], [0.0, 3.0], [0.5, 0.0]])), [0, 0, 1])


def test_zero_cost_inside():
    prob = DiscountedProblem(catalog.inward_drift(), catalog.halfspace())
    est = discounted_cost_estimate(prob, [0.0, 0.0], U1, N=20, dt=1e-2)
    assert est.estimate <= 1e-6 + prob.tail


def test_unit_cost_integral():
    prob = DiscountedProblem(still_system(), catalog.halfspace(),
                             cost=lambda x: np.ones(np.shape(x)[:-1]))
    est = discounted_cost_estimate(prob, [0.0, 0.0], ConstantPolicy((0.0,)), N=10, dt=1e-3)
    assert est.estimate == pytest.approx(1 - math.exp(-10), abs=max(3 * est.stderr, 1e-6))


def test_constant_path_outside():
    prob = DiscountedProblem(still_system(), catalog.halfspace())
    est = discounted_cost_estimate(prob, [0.4, 0.0], ConstantPolicy((0.0,)), N=4, dt=1e-3)
    assert est.estimate == pytest.approx(0.4 * (1 - math.exp(-10)), abs=1e-6)


def test_bound_holds_on_circle():
    prob = DiscountedProblem(catalog.circle(), catalog.ball(2))
    rep = value_bound_check(prob, [[1.0, 0.0], [0.0, -1.0]], N=50, dt=1e-3, seed=1)
    assert rep.passed
    assert len(rep.estimates) == 2 and len(rep.estimates[0]) == 2


def test_bound_fails_with_crossing_noise():
    prob = DiscountedProblem(catalog.halfspace_crossing(), catalog.halfspace())
    rep = value_bound_check(prob, [[0.0, 0.0]], N=100, dt=1e-3, seed=2)
    assert not rep.passed
    assert min(rep.estimates[0]) >= 0.05


def test_bound_inward_drift_exact():
    prob = DiscountedProblem(catalog.inward_drift(), catalog.halfspace())
    rep = value_bound_check(prob, [[0.0, 1.0]], N=10, dt=1e-2, seed=3)
    assert rep.passed and max(rep.estimates[0]) <= 1e-6 + prob.tail


def test_starts_must_lie_in_K():
    prob = DiscountedProblem(catalog.inward_drift(), catalog.halfspace())
    with pytest.raises(ValueError):
        value_bound_check(prob, [[1.0, 0.0]], N=10)


def test_threads_do_not_change_estimates():
    prob = DiscountedProblem(catalog.sphere(3), catalog.ball(3), T_trunc=10.0)
    starts = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]
    a = value_bound_check(prob, starts, N=10, dt=1e-2, seed=4, threads=1).to_dict()
    b = value_bound_check(prob, starts, N=10, dt=1e-2, seed=4, threads=4).to_dict()
    assert a == b
