import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invlab import catalog
from invlab.exprlang import (BinOp, Call, Compiled, DimensionError, Dual, ExprDomainError,
                             ExprError, ExprSyntaxError, Neg, Num, UnknownIdentifier, Var, parse,
                             to_source)
from invlab.numerics import finite_difference_check
from invlab.sde_core import stratonovich_drift


def test_sum_product_tree():
    assert parse("x1 + 2*x2", 2) == BinOp("+", Var("x", 0), BinOp("*", Num(2.0), Var("x", 1)))


def test_negation_and_power_precedence():
    assert parse("-x2", 2) == Neg(Var("x", 1))
    assert parse("-x1^2", 1) == Neg(BinOp("^", Var("x", 0), Num(2.0)))


def test_power_right_associative():
    assert parse("x1^2^3", 1) == BinOp("^", Var("x", 0), BinOp("^", Num(2.0), Num(3.0)))


def test_left_associative_subtraction():
    e = parse("x1 - x2 - 1", 2)
    assert e == BinOp("-", BinOp("-", Var("x", 0), Var("x", 1)), Num(1.0))


def test_whitespace_insensitive():
    assert parse(" sin( x1 )*u1 ", 1, 1) == parse("sin(x1)*u1", 1, 1)


def test_unknown_identifier_offset():
    with pytest.raises(UnknownIdentifier) as info:
        parse("x3", 2)
    assert info.value.offset == 0
    assert str(info.value).startswith("1:1:")


def test_unknown_function():
    with pytest.raises(UnknownIdentifier):
        parse("foo(x1)", 1)


def test_control_dimension_overflow():
    with pytest.raises((DimensionError, UnknownIdentifier)):
        parse("u2", 1, 1)


@pytest.mark.parametrize("src, offset", [("x1 +", 4), ("(x1", 3), ("x1 x1", 3), ("*x1", 0)])
def test_syntax_error_positions(src, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse(src, 1)
    assert info.value.offset == offset
    assert "expected" in info.value.message


def test_error_messages_deterministic():
    msgs = set()
    for _ in range(3):
        with pytest.raises(ExprError) as info:
            parse("x1 + + ", 1)
        msgs.add(str(info.value))
    assert len(msgs) == 1


def test_empty_source():
    with pytest.raises(ExprSyntaxError):
        parse("   ", 1)


def test_depth_limit():
    with pytest.raises(ExprError):
        parse("(" * 300 + "x1" + ")" * 300, 1)


def test_square_value_and_derivative():
    c = Compiled("x1*x1", 1)
    assert c.eval([3.0]) == 9.0
    assert c.gradient([3.0])[0] == 6.0


def test_sine_at_zero():
    c = Compiled("sin(x1)", 1)
    d = c.eval_dual([0.0])
    assert d.val == 0.0 and d.der[0] == 1.0


@pytest.mark.parametrize("src, x", [("log(x1 - 1)", [1.0]), ("1/x1", [0.0]), ("sqrt(x1)", [-1.0]),
                                    ("x1^0.5", [-2.0])])
def test_domain_errors(src, x):
    with pytest.raises(ExprDomainError):
        Compiled(src, 1).eval(x)


def test_domain_error_points_at_subexpression():
    with pytest.raises(ExprDomainError) as info:
        Compiled("x1 + log(x1)", 1).eval([0.0])
    assert info.value.offset == 5


def test_circle_expression_correction():
    sys = catalog.expression_system(2, 1, ["-x1/2", "-x2/2"], [["-x2"], ["x1"]], [[0.0]])
    x = np.array([0.6, 0.8])
    corr = sys.diffusion_jacobian(x, np.zeros(1), 0) @ sys.diffusion(x, np.zeros(1))[:, 0]
    np.testing.assert_allclose(corr, [-0.6, -0.8], atol=1e-15)
    np.testing.assert_allclose(stratonovich_drift(sys, x, np.zeros(1)), 0.0, atol=1e-15)


def test_abs_rejected_in_sigma():
    with pytest.raises(ExprDomainError):
        catalog.expression_system(1, 1, ["0"], [["abs(x1)"]], [[0.0]])


def test_batched_evaluation():
    c = Compiled("x1*u1 + x2", 2, 1)
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(c.eval(x, np.array([2.0])), [4.0, 10.0])


def test_hessian_of_polynomial():
    H = Compiled("x1^2*x2 + 3*x2^3", 2).hessian(np.array([1.0, 2.0]))
    np.testing.assert_allclose(H, [[4.0, 2.0], [2.0, 36.0]])


def test_nested_dual_arithmetic():
    a = Dual(Dual(2.0, [1.0]), [Dual(1.0, [0.0])])
    sq = a * a
    assert sq.val.val == 4.0 and sq.der[0].val == 4.0 and sq.der[0].der[0] == 2.0


# ------------------------------------------------- random expressions

N_VARS = 3

leaves = st.one_of(
    st.integers(0, N_VARS - 1).map(lambda i: f"x{i + 1}"),
    st.floats(-3, 3, allow_nan=False).map(lambda v: f"{v:.3f}".replace("-", "0-")),
)


def _combine(children):
    # each constructor keeps the result smooth and finite on R^3
    return st.one_of(
        st.tuples(children, children, st.sampled_from("+-*")).map(lambda t: f"({t[0]} {t[2]} {t[1]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]} / (1 + ({t[1]})^2))"),
        st.tuples(st.sampled_from(["sin", "cos", "tanh"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda c: f"exp(tanh({c}))"),
        children.map(lambda c: f"log(1 + ({c})^2)"),
        children.map(lambda c: f"sqrt(2 + sin({c}))"),
        children.map(lambda c: f"pow(tanh({c}), 2)"),
        children.map(lambda c: f"-({c})^3"),
    )


expressions = st.recursive(leaves, _combine, max_leaves=12)
points = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=N_VARS, max_size=N_VARS)


@settings(max_examples=1000, deadline=None)
@given(expressions, points)
def test_dual_partials_match_finite_differences(src, x):
    c = Compiled(src, N_VARS)
    x = np.array(x)
    rep = finite_difference_check(c.eval, c.gradient, [x], h=1e-5, tol=1e-5)
    scale = max(1.0, float(np.max(np.abs(c.gradient(x)))))
    assert rep.max_error <= 1e-5 * scale, (src, x, rep.max_error)


@settings(max_examples=300, deadline=None)
@given(expressions, points)
def test_eval_equals_dual_value(src, x):
    c = Compiled(src, N_VARS)
    assert c.eval(np.array(x)) == c.eval_dual(np.array(x)).val


@settings(max_examples=300, deadline=None)
@given(expressions)
def test_print_parse_idempotent(src):
    e = parse(src, N_VARS)
    assert parse(to_source(e), N_VARS) == e


@settings(max_examples=200, deadline=None)
@given(expressions, points)
def test_hessian_symmetric_and_matches_gradient_differences(src, x):
    c = Compiled(src, N_VARS)
    x = np.array(x)
    H = c.hessian(x)
    fd = finite_difference_check(c.gradient, lambda p: c.hessian(p), [x], h=1e-5, tol=1e-4)
    assert np.allclose(H, H.T, atol=1e-10 * max(1.0, np.abs(H).max()))
    assert fd.max_error <= 1e-4 * max(1.0, float(np.abs(H).max()))
