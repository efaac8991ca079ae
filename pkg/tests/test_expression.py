import math

import numpy as np
import pytest

from errors import EvalError, ParseError
from expression import At, Binary, Call, Number, Unary, Var, parse_expression


def value(source, **env):
    return float(parse_expression(source).evaluate(env))


def test_simple_expression():
    expr = parse_expression("sin(u) + 0.5*t")
    assert isinstance(expr.ast, Binary) and expr.ast.op == '+'
    assert isinstance(expr.ast.left, Call) and expr.ast.left.func == 'sin'
    assert expr.variables == {"u", "t"}
    assert value("sin(u) + 0.5*t", u=0.0, t=2.0) == pytest.approx(1.0)


def test_precedence_and_associativity():
    assert value("2^3^2") == 512.0
    assert value("-2^2") == -4.0
    assert value("2*-3") == -6.0
    assert value("8/4/2") == 1.0
    assert value("5-3-1") == 1.0
    assert value("1 + 2*3") == 7.0
    assert value("(1 + 2)*3") == 9.0


def test_tree_shapes():
    assert parse_expression("-x").ast == Unary('-', Var('x'))
    assert parse_expression("2.5").ast == Number(2.5)
    assert parse_expression("u2@t3").ast == At('u2', 't3')


def test_functions():
    assert value("exp(1)") == pytest.approx(math.e)
    assert value("abs(-3)") == 3.0
    assert value("tanh(0)") == 0.0
    assert value("cos(0)") == 1.0


def test_nonlocal_references():
    expr = parse_expression("u@t1 - 0.5*u@t2")
    assert expr.variables == {"u@t1", "u@t2"}
    assert float(expr.evaluate({"u@t1": 1.0, "u@t2": 4.0})) == pytest.approx(-1.0)


def test_vectorized_evaluation():
    t = np.linspace(0.0, 1.0, 5)
    out = parse_expression("t^2 + 1").evaluate({"t": t})
    assert np.allclose(out, t ** 2 + 1)


def test_is_zero():
    assert parse_expression("0").is_zero
    assert not parse_expression("0*u").is_zero


@pytest.mark.parametrize("source", [
    "sin(u) + 0.5*t",
    "-2^2",
    "2^3^2",
    "(a - b) - c",
    "a - (b - c)",
    "u@t1 * exp(-t/2)",
    "--x",
])
def test_unparse_reparses_to_same_tree(source):
    expr = parse_expression(source)
    assert parse_expression(expr.unparse()).ast == expr.ast


def test_parse_error_at_end_of_input():
    with pytest.raises(ParseError) as info:
        parse_expression("sin(")
    assert info.value.offset == 4
    assert info.value.expected


def test_parse_error_offset_of_bad_token():
    with pytest.raises(ParseError) as info:
        parse_expression("2 + * 3")
    assert info.value.offset == 4


def test_parse_error_offset_of_bad_character():
    with pytest.raises(ParseError) as info:
        parse_expression("2 $ 3")
    assert info.value.offset == 2


def test_unknown_function():
    with pytest.raises(ParseError) as info:
        parse_expression("1 + foo(u)")
    assert info.value.offset == 4
    assert "sin" in info.value.expected


def test_evaluation_errors():
    with pytest.raises(EvalError):
        value("1/(u-1)", u=1.0)
    with pytest.raises(EvalError):
        value("y + 1")
    with pytest.raises(EvalError):
        value("u@t1")


@pytest.mark.parametrize("source", ["0^-1", "exp(1000)", "(-8)^0.5", "exp(u)*0 + 1e308*10"])
def test_non_finite_results(source):
    with pytest.raises(EvalError):
        value(source, u=1.0)


def test_non_finite_entry_in_vector():
    with pytest.raises(EvalError):
        parse_expression("t^-1").evaluate({"t": np.array([1.0, 0.0])})
