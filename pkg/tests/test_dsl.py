import numpy as np
import pytest

from ergocert.dsl import (BinOp, DomainError, ExprSyntaxError, ExprError, evaluate, parse_expr,
                          to_text)


def test_polynomial_drift_parses_and_evaluates():
    e = parse_expr("-K*x1*abs(x1)^(kappa-1)", 1, {"K", "kappa"})
    v = evaluate(e, [[2.0], [-3.0]], {"K": 1.0, "kappa": 2.0})
    np.testing.assert_allclose(v, [-4.0, 9.0])


def test_identity_coordinate():
    e = parse_expr("x2", 3)
    X = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(evaluate(e, X), X[:, 1])


def test_division_by_zero_is_domain_error():
    e = parse_expr("1/(x1-x1)", 1)
    with pytest.raises(DomainError) as exc:
        evaluate(e, [[0.5], [2.0]])
    np.testing.assert_array_equal(exc.value.point, [0.5])


def test_negative_base_fractional_power_is_domain_error():
    e = parse_expr("x1^0.5", 1)
    with pytest.raises(DomainError):
        evaluate(e, [[-1.0]])


def test_log_and_sqrt_domain():
    for text in ("ln(x1)", "sqrt(x1)"):
        with pytest.raises(DomainError):
            evaluate(parse_expr(text, 1), [[-2.0]])


def test_precedence():
    # pow binds tighter than unary minus, which binds tighter than * /
    cases = {"-2^2": -4.0, "2*3+4": 10.0, "2+3*4": 14.0, "(2+3)*4": 20.0, "2^3^2": 512.0,
             "8/2/2": 2.0, "-x1*3": -6.0}
    for text, want in cases.items():
        assert evaluate(parse_expr(text, 1), [[2.0]])[0] == pytest.approx(want), text


def test_norm_symbols():
    X = np.array([[3.0, 4.0]])
    assert evaluate(parse_expr("abs(x)", 2), X)[0] == pytest.approx(5.0)
    x0 = np.array([3.0, 0.0])
    assert evaluate(parse_expr("abs(x-x0)", 2), X, x0=x0)[0] == pytest.approx(4.0)


@pytest.mark.parametrize("text", ["", "1+", "x1 x1", "sin(", "(1", "3 $ 4"])
def test_syntax_errors_carry_offset(text):
    with pytest.raises(ExprSyntaxError) as exc:
        parse_expr(text, 1)
    assert 0 <= exc.value.offset <= len(text)


def test_unknown_identifier_and_index():
    with pytest.raises(ExprError):
        parse_expr("foo*x1", 1)
    with pytest.raises(ExprError):
        parse_expr("x3", 2)
    with pytest.raises(ExprError):
        parse_expr("K*x1", 1, set())


def test_round_trip_examples():
    for text in ["-K*x1*abs(x)^(kappa-1)", "c^(-beta)*abs(x)^(beta/alpha)", "-(2^2)", "(-2)^2",
                 "1-(2-3)", "x1/(x1*2)", "exp(-x1^2)+cos(x1)*sin(x1)"]:
        e = parse_expr(text, 1, {"K", "kappa", "c", "beta", "alpha"})
        assert parse_expr(to_text(e), 1, {"K", "kappa", "c", "beta", "alpha"}) == e


def test_ast_is_binop():
    assert isinstance(parse_expr("x1+1", 1), BinOp)
