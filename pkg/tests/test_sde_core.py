import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invlab import catalog
from invlab.sde_core import (ClosedSet, EvaluationError, assemble_A_matrix, dsigma_fd_error,
                             generator_first_order, generator_second_order, lipschitz_quotients,
                             projected_distance, sigma_apply, sigma_second_apply,
                             stratonovich_drift)

from helpers import make_system, quadratic

ZERO = np.zeros(1)


def expr(n, d, b, sigma):
    return catalog.expression_system(n, d, b, sigma, [[0.0]])


# ------------------------------------------------------------ b tilde


def test_no_noise_keeps_drift():
    sys = expr(2, 1, ["x1*x2", "sin(x1)"], [["0"], ["0"]])
    x = np.array([0.3, -1.2])
    np.testing.assert_array_equal(stratonovich_drift(sys, x, ZERO), sys.drift(x, ZERO))


def test_circle_correction_cancels(circle):
    x = np.random.default_rng(0).normal(size=(100, 2))
    assert np.max(np.abs(stratonovich_drift(circle, x, np.ones(1)))) <= 1e-12


def test_linear_noise_correction():
    sys = expr(2, 1, ["0", "0"], [["x1"], ["0"]])
    np.testing.assert_allclose(stratonovich_drift(sys, np.array([1.0, 0.0]), ZERO), [-0.5, 0.0])


# ---------------------------------------------------------- generators


def test_second_order_circle_norm(circle):
    phi = quadratic(2 * np.eye(2))
    assert generator_second_order(circle, phi, np.array([1.0, 0.0]), np.ones(1)) == pytest.approx(0.0, abs=1e-15)


def test_second_order_without_noise():
    sys = expr(2, 1, ["x2", "-x1"], [["0"], ["0"]])
    phi = quadratic(np.diag([1.0, 3.0]))
    x = np.array([0.4, 0.7])
    assert generator_second_order(sys, phi, x, ZERO) == pytest.approx(
        float(sys.drift(x, ZERO) @ phi.grad(x)))


def test_second_order_affine_phi():
    sys = expr(2, 2, ["x1", "1"], [["1", "x2"], ["x1", "2"]])
    phi = quadratic(np.zeros((2, 2)), c=[2.0, -1.0])
    x = np.array([0.5, -0.25])
    assert generator_second_order(sys, phi, x, ZERO) == float(sys.drift(x, ZERO) @ [2.0, -1.0])


def test_first_order_circle(circle):
    phi = quadratic(np.diag([2.0, -1.0]), c=[1.0, 1.0])
    x = np.random.default_rng(1).normal(size=(20, 2))
    np.testing.assert_allclose(generator_first_order(circle, phi, x, np.ones(1)), 0.0, atol=1e-12)


def test_first_order_constant_sigma_affine_phi():
    sys = expr(2, 1, ["x1^2", "x2"], [["1"], ["2"]])
    phi = quadratic(np.zeros((2, 2)), c=[1.0, 3.0])
    x = np.array([0.7, 0.1])
    assert generator_first_order(sys, phi, x, ZERO) == generator_second_order(sys, phi, x, ZERO)


def test_first_order_inward_drift():
    sys = catalog.inward_drift()
    phi = quadratic(np.zeros((2, 2)), c=[1.0, 0.0])
    assert generator_first_order(sys, phi, np.array([0.0, 3.0]), np.ones(1)) == -1.0


# ---------------------------------------------------- sigma derivatives


def test_sigma_apply_circle_on_g(circle, disk):
    assert sigma_apply(circle, disk.test_function(), np.array([1.0, 0.0]), np.ones(1), 0) == 0.0


def test_sigma_apply_constant_phi(circle):
    phi = quadratic(np.zeros((2, 2)), const=4.0)
    assert sigma_apply(circle, phi, np.array([0.3, 0.2]), np.ones(1), 0) == 0.0


def test_sigma_apply_coordinate():
    sys = expr(2, 1, ["0", "0"], [["1"], ["0"]])
    phi = quadratic(np.zeros((2, 2)), c=[1.0, 0.0])
    assert sigma_apply(sys, phi, np.array([5.0, -2.0]), ZERO, 0) == 1.0


def test_sigma_second_apply_circle(circle, disk):
    th = np.random.default_rng(2).uniform(0, 2 * np.pi, 50)
    x = np.stack([np.cos(th), np.sin(th)], axis=-1)
    np.testing.assert_allclose(sigma_second_apply(circle, disk.test_function(), x, np.ones(1), 0, 0),
                               0.0, atol=1e-14)


def test_sigma_second_apply_affine_constant():
    sys = expr(2, 2, ["0", "0"], [["1", "2"], ["3", "4"]])
    phi = quadratic(np.zeros((2, 2)), c=[1.0, -1.0])
    assert sigma_second_apply(sys, phi, np.array([0.1, 0.2]), ZERO, 0, 1) == 0.0


def test_sigma_second_apply_square():
    sys = expr(1, 1, ["0"], [["1"]])
    phi = quadratic([[2.0]])
    assert sigma_second_apply(sys, phi, np.array([0.37]), ZERO, 0, 0) == pytest.approx(2.0)


def test_channel_out_of_range(circle):
    with pytest.raises(IndexError):
        sigma_apply(circle, quadratic(np.eye(2)), np.zeros(2), np.ones(1), 1)
    with pytest.raises(IndexError):
        circle.diffusion_jacobian(np.zeros(2), np.ones(1), -1)


# ----------------------------------------------------------- A matrix


def test_A_circle_zero(circle, disk):
    A = assemble_A_matrix(circle, disk.test_function(), np.array([1.0, 0.0]), np.ones(1))
    assert A.shape == (1, 1) and A[0, 0] == 0.0


def test_A_no_noise():
    sys = expr(2, 2, ["x1", "x2"], [["0", "0"], ["0", "0"]])
    np.testing.assert_array_equal(assemble_A_matrix(sys, quadratic(np.eye(2)), np.ones(2), ZERO), 0.0)


def test_A_identity_columns():
    sys = expr(2, 2, ["0", "0"], [["1", "0"], ["0", "1"]])
    A = assemble_A_matrix(sys, quadratic(-2 * np.eye(2)), np.array([0.3, -0.4]), ZERO)
    np.testing.assert_allclose(A, np.diag([-2.0, -2.0]))


def test_A_is_not_symmetrised():
    # sigma^1 = (1, 0), sigma^2 = (0, x1): a_12 = 0, a_21 = <sigma^2, Dsigma^1' ...> differs
    sys = expr(2, 2, ["0", "0"], [["1", "0"], ["0", "x1"]])
    phi = quadratic(np.zeros((2, 2)), c=[0.0, 1.0])
    A = assemble_A_matrix(sys, phi, np.array([0.0, 0.0]), ZERO)
    assert A[0, 1] == pytest.approx(1.0) and A[1, 0] == 0.0


# --------------------------------------------------------- properties

PROBE_SYSTEMS = [catalog.circle(), catalog.sphere(3), catalog.sphere(4), catalog.halfspace_tangent(),
                 catalog.halfspace_crossing(), catalog.inward_drift()]


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(range(len(PROBE_SYSTEMS))), st.integers(0, 2 ** 32 - 1))
def test_trace_identity(which, seed):
    sys = PROBE_SYSTEMS[which]
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(sys.n, sys.n))
    phi = quadratic(B + B.T, c=rng.normal(size=sys.n))
    x = rng.normal(size=sys.n)
    u = sys.controls[rng.integers(len(sys.controls))]
    L = generator_second_order(sys, phi, x, u)
    Lp = generator_first_order(sys, phi, x, u)
    A = assemble_A_matrix(sys, phi, x, u)
    assert abs(L - Lp - 0.5 * np.trace(A)) <= 1e-8 * max(1.0, abs(L))


@pytest.mark.parametrize("sys", PROBE_SYSTEMS, ids=lambda s: s.name)
def test_catalog_jacobians_match_differences(sys):
    pts = np.random.default_rng(4).normal(size=(10, sys.n))
    for u in sys.controls:
        assert dsigma_fd_error(sys, pts, u) <= 1e-8


@pytest.mark.parametrize("sys", PROBE_SYSTEMS, ids=lambda s: s.name)
def test_catalog_lipschitz_finite(sys):
    q = lipschitz_quotients(sys, np.random.default_rng(5))
    assert all(np.isfinite(v) and v < 100 for v in q.values())


def test_non_finite_coefficients_raise():
    sys = make_system(1, 1, lambda x: np.full(x.shape, np.nan), lambda x: np.ones(x.shape + (1,)))
    with pytest.raises(EvaluationError):
        sys.drift(np.zeros(1), ZERO)


def test_projected_distance_matches_ball():
    ball = catalog.ball(3)
    implicit = ClosedSet(ball.g, ball.dg, ball.d2g, name="implicit-ball")
    x = np.random.default_rng(6).normal(scale=2.0, size=(200, 3))
    np.testing.assert_allclose(projected_distance(implicit, x), ball.dist(x), atol=1e-10)


def test_projected_distance_on_ellipse():
    # {x1^2/4 + x2^2 <= 1}: from (0, 3) the nearest point is (0, 1)
    K = catalog.expression_set("x1^2/4 + x2^2 - 1", 2)
    assert K.dist(np.array([0.0, 3.0])) == pytest.approx(2.0, abs=1e-10)
    assert K.dist(np.array([1.0, 0.5])) == 0.0
