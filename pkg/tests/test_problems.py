import numpy as np
import pytest
from numpy.testing import assert_allclose

from foldfinder.core import lambda_of, ratio_profile
from foldfinder.errors import (
    BadExponent,
    DimensionMismatch,
    NegativeEntry,
    NonpositiveParameter,
    NotIrreducible,
    ParseError,
    ProblemFileError,
    UnknownIdentifier,
)
from foldfinder.problems import (
    build_bratu_fd,
    build_convex_concave_fd,
    build_linear,
    build_power_flow,
    list_problems,
    load_problem,
    parse_problem,
    power_flow_nose,
    problem_data,
    resolve_problem,
)

CUSTOM = """
kind = "custom"
name = "shifted"
n = 2

[expressions]
g = ["x1 + x2", "2 * x2"]
h = ["x1", "x2"]

[domain]
lower = [0.0, 0.0]
upper = [1.0, 1.0]
"""


def test_linear_problem_peaks_at_the_perron_vector():
    system = build_linear([[0.0, 2.0], [3.0, 0.0]])
    perron = np.array([np.sqrt(2), np.sqrt(3)])
    assert lambda_of(system, perron) == pytest.approx(np.sqrt(6))
    assert lambda_of(system, [1.0, 1.0]) < np.sqrt(6)


@pytest.mark.parametrize(
    "A, error",
    [
        (np.eye(2), NotIrreducible),
        ([[0.0, -1.0], [1.0, 0.0]], NegativeEntry),
        ([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], DimensionMismatch),
    ],
)
def test_linear_problem_rejects(A, error):
    with pytest.raises(error):
        build_linear(A)


def test_power_flow_nose_solves_the_equations():
    theta, v, lam = power_flow_nose(1.0, 1.0)
    assert lam == pytest.approx((np.sqrt(2) - 1) / 2, abs=1e-12)
    assert theta == pytest.approx(-np.pi / 8, abs=1e-12)
    system = build_power_flow(1.0, 1.0)
    assert_allclose(system.f([theta, v], lam), [0.0, 0.0], atol=1e-12)


def test_power_flow_ratios():
    system = build_power_flow(1.0, 1.0)
    profile = ratio_profile(system, [0.0, 0.5])
    assert profile.ratios[1] == pytest.approx(0.25)
    assert profile.lambda_of_x == 0.0
    with pytest.raises(NonpositiveParameter):
        build_power_flow(0.0, 1.0)


def test_convex_concave_single_node():
    system = build_convex_concave_fd(1)
    assert_allclose(system.seed_point, [8 / 3])
    u = 8 / 3
    assert lambda_of(system, [u]) == pytest.approx(8 * np.sqrt(u) - u**1.5)
    assert lambda_of(system, [u]) > lambda_of(system, [u + 0.1])
    assert lambda_of(system, [u]) > lambda_of(system, [u - 0.1])


def test_convex_concave_exponents():
    with pytest.raises(BadExponent):
        build_convex_concave_fd(3, q=1.0)
    with pytest.raises(BadExponent):
        build_convex_concave_fd(3, gamma=1.0)
    with pytest.raises(DimensionMismatch):
        build_convex_concave_fd(0)


def test_convex_concave_expression_matches_builtin(rng):
    builtin = build_convex_concave_fd(5)
    written = build_convex_concave_fd(5, p_expr="t^2")
    u = rng.uniform(0.1, 2.0, 5)
    assert_allclose(written.g_of(u), builtin.g_of(u))
    assert_allclose(written.jacobian_g(u), builtin.jacobian_g(u))


def test_growth_warning_for_a_linear_nonlinearity():
    with pytest.warns(UserWarning, match="growth hypothesis"):
        build_convex_concave_fd(3, p_expr="t")


@pytest.mark.parametrize("build", [build_bratu_fd, build_convex_concave_fd])
def test_positivity_start_has_positive_lambda(build):
    system = build(9)
    assert lambda_of(system, system.positivity_start) > 0


def test_bratu_mesh():
    system = build_bratu_fd(3, L=2.0)
    tau = 0.5
    assert_allclose(system.jacobian_g(np.ones(3))[0, :2], [2 / tau**2, -1 / tau**2])
    assert_allclose(system.h_of(np.zeros(3)), np.ones(3))


def test_parse_custom_problem():
    spec = parse_problem(CUSTOM)
    assert spec.kind == "custom"
    assert spec.name == "shifted"
    system = spec.build()
    assert system.name == "shifted"
    assert_allclose(system.g_of([0.5, 0.25]), [0.75, 0.5])
    assert_allclose(system.jacobian_h([0.5, 0.25]), np.eye(2))
    assert not system.domain.contains([1.5, 0.5])


def test_unknown_kind():
    with pytest.raises(ProblemFileError, match="kind must be one of"):
        parse_problem('kind = "heat"\n')


def test_missing_key():
    with pytest.raises(ProblemFileError, match="'n'"):
        parse_problem('kind = "bratu-fd"\n').build()


def test_toml_syntax_error_has_a_line():
    with pytest.raises(ParseError) as info:
        parse_problem('kind = "linear"\nA = = 1\n')
    assert info.value.line == 2


def test_expression_errors_surface_through_the_file():
    text = CUSTOM.replace('"x1 + x2"', '"x1 + x3"')
    with pytest.raises(UnknownIdentifier):
        parse_problem(text).build()
    with pytest.raises(ParseError):
        parse_problem(CUSTOM.replace('"2 * x2"', '"2 * "')).build()


def test_overrides_and_params():
    spec = parse_problem('kind = "bratu-fd"\nn = 2\nseed_point = [0.5, 0.5]\n')
    assert_allclose(spec.build().seed_point, [0.5, 0.5])
    assert spec.params == {"n": 2}
    assert parse_problem('kind = "bratu-fd"\nn = 2\n').with_param("n", 3).build().n == 3
    with pytest.raises(DimensionMismatch):
        parse_problem('kind = "bratu-fd"\nn = 2\nseed_point = [0.5]\n').build()


def test_bundled_problems():
    names = list_problems()
    assert {"bratu", "linear", "pf", "convex_concave", "custom_pf"} <= set(names)
    assert problem_data("pf").n == 2
    assert problem_data("pf").kind == "power-flow"
    assert problem_data("bratu20").n == 20
    for name in names:
        assert load_problem(resolve_problem(name)).build().n >= 1


def test_resolve_problem(tmp_path):
    path = tmp_path / "mine.toml"
    path.write_text('kind = "power-flow"\np = 2.0\nq = 1.0\n')
    assert resolve_problem(path) == path
    assert resolve_problem("pf").name == "pf.toml"
    with pytest.raises(ProblemFileError):
        resolve_problem("nope")
    system = load_problem(path).build()
    assert system.params == {"kind": "power-flow", "p": 2.0, "q": 1.0}


def test_custom_power_flow_agrees_with_the_builtin(rng):
    custom = load_problem(resolve_problem("custom_pf")).build()
    builtin = build_power_flow(1.0, 1.0)
    for _ in range(20):
        x = rng.uniform([-1.2, 0.1], [1.2, 2.0])
        assert_allclose(custom.f(x, 0.3), builtin.f(x, 0.3), atol=1e-12)
        assert_allclose(custom.jac_x(x, 0.3), builtin.jac_x(x, 0.3), atol=1e-12)
