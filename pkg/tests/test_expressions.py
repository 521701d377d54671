import gc
import weakref

import numpy as np
import pytest
from numpy.testing import assert_allclose

from foldfinder.core import fd_jacobian
from foldfinder.errors import DimensionMismatch, ParseError, UnknownIdentifier
from foldfinder.expressions import Expression, compile_vector, parse_expression, tokenize


@pytest.mark.parametrize(
    "source, x, expected",
    [
        ("-x1^2", [3.0], -9.0),
        ("2^3^2", [0.0], 512.0),
        ("x1 - x2 - 1", [5.0, 2.0], 2.0),
        ("x1 / x2 / 2", [8.0, 2.0], 2.0),
        ("2 * -x1", [1.5], -3.0),
        ("pow(x1, 3) + exp(0) + log(1)", [2.0], 9.0),
        ("sin(pi / 2) * cos(0)", [0.0], 1.0),
        ("1.5e1 + .5", [0.0], 15.5),
        ("−x2*sin(x1)", [np.pi / 2, 2.0], -2.0),
    ],
)
def test_evaluation(source, x, expected):
    assert Expression(source, len(x))(x) == pytest.approx(expected)


def test_batch_evaluation():
    points = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert_allclose(Expression("x1 * x2", 2)(points), [4.0, 10.0, 18.0])
    assert_allclose(Expression("7", 2)(points), [7.0, 7.0, 7.0])
    with pytest.raises(DimensionMismatch):
        Expression("x1", 2)(np.ones(3))


def test_dangling_operator():
    with pytest.raises(ParseError) as info:
        parse_expression("x1 + ", 1)
    assert (info.value.line, info.value.column) == (1, 6)


def test_error_position_on_a_later_line():
    with pytest.raises(ParseError) as info:
        parse_expression("x1 +\n * x2", 2)
    assert (info.value.line, info.value.column) == (2, 2)


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier) as info:
        parse_expression("x1 + x3", 2)
    assert info.value.column == 6
    with pytest.raises(UnknownIdentifier):
        parse_expression("tan(x1)", 1)
    with pytest.raises(UnknownIdentifier):
        parse_expression("x0", 1)


def test_named_variables():
    tree = parse_expression("t^2 + 1", 1, variables=("t",))
    assert tree.evaluate([3.0]) == 10.0
    with pytest.raises(UnknownIdentifier):
        parse_expression("x1", 1, variables=("t",))


@pytest.mark.parametrize("source", ["pow(x1)", "sin(x1, x1)", "(x1", "x1 x1", "x1 $ 2", ""])
def test_rejected(source):
    with pytest.raises(ParseError):
        parse_expression(source, 1)


def test_tokens_carry_positions():
    tokens = tokenize("x1*\n  sin(x2)")
    assert [(t.text, t.line, t.column) for t in tokens[:4]] == [
        ("x1", 1, 1),
        ("*", 1, 3),
        ("sin", 2, 3),
        ("(", 2, 6),
    ]
    assert tokens[-1].kind == "end"


def test_derivatives_of_the_power_flow_equations():
    value, jacobian = compile_vector(["-x2 * sin(x1)", "x2 * cos(x1) - x2^2"], 2)
    x = np.array([0.3, 0.8])
    assert_allclose(value(x), [-0.8 * np.sin(0.3), 0.8 * np.cos(0.3) - 0.64])
    assert_allclose(
        jacobian(x),
        [[-0.8 * np.cos(0.3), -np.sin(0.3)], [-0.8 * np.sin(0.3), np.cos(0.3) - 1.6]],
    )
    with pytest.raises(DimensionMismatch):
        compile_vector(["x1"], 2)


def test_constant_derivatives_fold_away():
    assert str(Expression("3 * x1 + 2", 1).derivative(0)) == "3.0"
    assert str(Expression("x2 * 5", 2).derivative(0)) == "0.0"


def random_expression(rng, n, depth):
    """Expressions that stay finite on [0.5, 1.5]^n."""
    var = f"x{rng.integers(1, n + 1)}"
    if depth == 0:
        return var if rng.random() < 0.7 else f"{rng.uniform(0.5, 3.0):.3f}"
    a = random_expression(rng, n, depth - 1)
    b = random_expression(rng, n, depth - 1)
    templates = [
        f"({a}) + ({b})",
        f"({a}) - ({b})",
        f"({a}) * ({b})",
        f"({a}) / (2 + ({b})^2)",
        f"sin({a})",
        f"cos({a}) * {var}",
        f"exp(sin({a}))",
        f"log(1 + ({a})^2)",
        f"pow(1 + ({a})^2, {var})",
        f"-({a})^2",
    ]
    return templates[rng.integers(len(templates))]


def test_random_expression_derivatives(rng):
    n = 3
    for _ in range(50):
        source = random_expression(rng, n, depth=3)
        expression = Expression(source, n)
        x = rng.uniform(0.5, 1.5, n)
        analytic = np.array([expression.derivative(j)(x) for j in range(n)])
        numeric = fd_jacobian(lambda z: np.atleast_1d(expression(z)), x)[0]
        scale = max(1.0, np.max(np.abs(numeric)))
        assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-5 * scale, err_msg=source)


def test_derivatives_are_cached_per_expression():
    expression = Expression("x1 * x2", 2)
    assert expression.derivative(1) is expression.derivative(1)
    assert str(expression.derivative(1)) == "x1"
    ref = weakref.ref(expression)
    del expression
    gc.collect()
    assert ref() is None
