import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import builtin_systems
from foldfinder.core import (
    DomainSpec,
    ParametricSystem,
    bifurcation_functional,
    damped_newton,
    fd_jacobian,
    lambda_of,
    ratio_gradients,
    ratio_profile,
    sample_points,
    subdifferential,
)
from foldfinder.errors import DegenerateWeight, DomainViolation, InvalidDomain, DimensionMismatch


def test_profile_symmetric_linear(symmetric_linear):
    profile = ratio_profile(symmetric_linear, [1.0, 1.0])
    assert_allclose(profile.ratios.data, [3.0, 3.0])
    assert profile.lambda_of_x == 3.0
    assert profile.active == (0, 1)
    assert profile.full_active


def test_profile_power_flow_at_zero_angle(power_flow):
    profile = ratio_profile(power_flow, [0.0, 0.5])
    assert_allclose(profile.ratios.data, [0.0, 0.25], atol=1e-15)
    assert profile.lambda_of_x == pytest.approx(0.0, abs=1e-15)
    assert profile.active == (0,)
    assert not profile.full_active


def test_profile_bratu_two_nodes(bratu2):
    profile = ratio_profile(bratu2, [1.0, 1.0])
    assert_allclose(profile.ratios.data, [9 / np.e, 9 / np.e], rtol=1e-14)
    assert profile.lambda_of_x == pytest.approx(3.310915, abs=1e-6)
    assert profile.active == (0, 1)


def test_profile_outside_domain(bratu1):
    with pytest.raises(DomainViolation):
        ratio_profile(bratu1, [-0.5])
    assert lambda_of(bratu1, [-0.5]) == -np.inf


def test_undefined_weights_are_masked():
    system = ParametricSystem(
        2,
        g=lambda x: np.stack([x[0], x[1]]),
        h=lambda x: np.stack([np.ones_like(x[0]), np.zeros_like(x[1])]),
        domain=DomainSpec.box([0.0, 0.0], [1.0, 1.0]),
    )
    profile = ratio_profile(system, [0.5, 0.2])
    assert list(profile.defined) == [True, False]
    assert profile.lambda_of_x == 0.5
    assert profile.active == (0,)
    assert profile.to_dict()["ratios"] == [0.5, None]


def test_all_weights_vanish():
    system = ParametricSystem(
        1,
        g=lambda x: x,
        h=lambda x: np.zeros_like(x),
        domain=DomainSpec.box([0.0], [1.0]),
    )
    with pytest.raises(DegenerateWeight):
        ratio_profile(system, [0.5])
    assert lambda_of(system, [0.5]) == -np.inf


def test_full_active_solves_the_system(bratu2):
    profile = ratio_profile(bratu2, [1.0, 1.0])
    assert profile.residual() <= bratu2.n * 1e-8 * profile.weights.max()


def test_batch_functional_matches_pointwise(power_flow, rng):
    points = rng.uniform([-2.0, -0.5], [2.0, 2.0], size=(200, 2))
    batch = bifurcation_functional(power_flow, points.T)
    assert_allclose(batch, [lambda_of(power_flow, x) for x in points])
    assert np.all(batch[np.abs(points[:, 0]) >= np.pi / 2] == -np.inf)


def test_subdifferential_symmetric_linear(symmetric_linear):
    sub = subdifferential(symmetric_linear, ratio_profile(symmetric_linear, [1.0, 1.0]))
    assert_allclose(sub.gradients, [[-1.0, 1.0], [1.0, -1.0]], atol=1e-15)
    assert sub.hull_dimension == 1


def test_gradient_vanishes_at_bratu_fold(bratu1):
    sub = subdifferential(bratu1, ratio_profile(bratu1, [1.0]))
    assert_allclose(sub.gradients, [[0.0]], atol=1e-14)


@pytest.mark.parametrize("name, system, box", builtin_systems())
def test_ratio_gradients_match_finite_differences(name, system, box, rng):
    lower, upper = map(np.asarray, box)
    indices = range(system.n)
    for x in rng.uniform(lower, upper, size=(100, system.n)):
        analytic = ratio_gradients(system, x, indices)
        numeric = fd_jacobian(lambda z: system.g_of(z) / system.h_of(z), x)
        scale = max(1.0, np.max(np.abs(numeric)))
        assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-5 * scale, err_msg=name)


@pytest.mark.parametrize("name, system, box", builtin_systems())
def test_analytic_jacobians_match_fallback(name, system, box, rng):
    bare = system.without_jacobians()
    lower, upper = map(np.asarray, box)
    for x in rng.uniform(lower, upper, size=(20, system.n)):
        assert_allclose(system.jacobian_g(x), bare.jacobian_g(x), rtol=1e-6, atol=1e-6)
        assert_allclose(system.jacobian_h(x), bare.jacobian_h(x), rtol=1e-6, atol=1e-6)


def test_scaling_leaves_the_profile_unchanged(power_flow, rng):
    scaled = power_flow.scaled(7.5)
    for x in rng.uniform([-1.2, 0.1], [1.2, 2.0], size=(50, 2)):
        a, b = ratio_profile(power_flow, x), ratio_profile(scaled, x)
        assert b.lambda_of_x == pytest.approx(a.lambda_of_x, rel=1e-12, abs=1e-14)
        assert a.active == b.active


def test_weights_admissible(bratu1, power_flow):
    assert bratu1.weights_admissible([0.3])
    assert power_flow.weights_admissible([0.1, 1.0])


def test_domain_spec():
    domain = DomainSpec.box([0.0, -1.0], [1.0, 1.0], strict=[True, False])
    assert domain.contains([0.5, -1.0])
    assert not domain.contains([0.0, 0.0])
    assert not domain.contains([0.5, np.nan])
    assert not domain.contains([0.5])
    assert domain.near_boundary([1e-9, 0.0])
    assert not domain.near_boundary([0.5, 0.0])
    with pytest.raises(InvalidDomain):
        DomainSpec.box([1.0], [0.0])
    with pytest.raises(DimensionMismatch):
        DomainSpec.box([0.0, 0.0], [1.0])


def test_step_bounds_keep_a_fraction_of_the_distance():
    domain = DomainSpec.positive_orthant(2)
    lo, hi = domain.step_bounds([0.1, 5.0], radius=1.0)
    assert_allclose(lo, [-0.09, -1.0])
    assert_allclose(hi, [1.0, 1.0])


def test_sample_points_lie_inside(power_flow, rng):
    points = sample_points(power_flow, 30, rng)
    assert len(points) == 30
    assert all(power_flow.domain.contains(x) for x in points)


def test_damped_newton_finds_a_bratu_root(bratu1):
    result = damped_newton(bratu1, 2.0, [0.5])
    assert result.converged
    assert abs(bratu1.f(result.x, 2.0)[0]) <= 1e-10
    assert result.residual < result.initial_residual
