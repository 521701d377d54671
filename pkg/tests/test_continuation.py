import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from foldfinder.continuation import (
    ContinuationConfig,
    _extended_jacobian,
    branch_points,
    detect_folds,
    fold_from_branch,
    initial_point,
    polish_start,
    refine_fold,
    trace_branch,
    trace_through,
)
from foldfinder.errors import StartInfeasible, UsageError
from foldfinder.problems import power_flow_nose

LAMBDA_BRATU1 = 8 / np.e


@pytest.fixture
def bratu1_branch(bratu1):
    return trace_branch(bratu1, initial_point(bratu1), ContinuationConfig(max_points=200))


def test_bratu_branch_turns_at_the_fold(bratu1_branch):
    assert bratu1_branch.fold_indices
    assert bratu1_branch.lambdas.max() <= LAMBDA_BRATU1 + bratu1_branch.config.corrector_tol
    folds = fold_from_branch(bratu1_branch)
    assert len(folds) == 1
    fold = folds[0]
    assert fold.kind == "max"
    assert fold.lam == pytest.approx(LAMBDA_BRATU1, abs=1e-8)
    assert fold.x[0] == pytest.approx(1.0, abs=1e-6)
    assert abs(fold.tangent_lambda) <= 1e-8


def test_branch_points_solve_the_system(bratu1, bratu1_branch):
    for x, lam, _ in bratu1_branch.points:
        assert np.max(np.abs(bratu1.f(x, lam))) <= bratu1_branch.config.corrector_tol


def test_tangents_span_the_kernel(power_flow):
    branch = trace_branch(power_flow, initial_point(power_flow), ContinuationConfig(max_points=60))
    for x, lam, t in zip(branch.xs, branch.lambdas, branch.tangents):
        DF = _extended_jacobian(power_flow, np.append(x, lam))
        assert np.linalg.norm(DF @ t) <= 1e-8 * (1 + np.linalg.norm(DF))
        assert np.linalg.norm(t) == pytest.approx(1.0)
    assert np.all(np.diff(branch.s) > 0)


def test_power_flow_nose_by_continuation(power_flow):
    branch = trace_branch(power_flow, initial_point(power_flow))
    folds = fold_from_branch(branch)
    theta, v, lam = power_flow_nose(1.0, 1.0)
    assert folds[0].kind == "max"
    assert folds[0].lam == pytest.approx(lam, abs=1e-7)
    assert_allclose(folds[0].x, [theta, v], atol=1e-5)


def test_monotone_segment_has_no_fold(power_flow):
    config = ContinuationConfig(step=0.01, max_points=5)
    branch = trace_branch(power_flow, initial_point(power_flow), config)
    assert np.all(np.diff(branch.lambdas) > 0)
    assert branch.stop_reason == "max-points"
    assert fold_from_branch(branch) == []


def test_linear_ray_has_constant_lambda(symmetric_linear):
    branch = trace_branch(symmetric_linear, (np.array([1.0, 1.0]), 3.0))
    assert_allclose(branch.lambdas, 3.0, atol=1e-8)
    assert branch.fold_indices == []
    assert branch.stop_reason == "domain-exit"
    x = branch.xs / np.linalg.norm(branch.xs, axis=1)[:, None]
    assert_allclose(x, 2**-0.5, atol=1e-8)


def test_half_step_gives_the_same_fold(bratu1):
    start = initial_point(bratu1)
    coarse = fold_from_branch(trace_branch(bratu1, start, ContinuationConfig(max_points=100)))
    fine = fold_from_branch(trace_branch(bratu1, start, ContinuationConfig(step=0.025, max_points=200)))
    assert fine[0].lam == pytest.approx(coarse[0].lam, abs=1e-8)


def test_trace_through_a_fold_start(bratu1):
    branch = trace_through(bratu1, (np.array([1.0]), LAMBDA_BRATU1), ContinuationConfig(max_points=40))
    assert branch.lambdas.max() <= LAMBDA_BRATU1 + 1e-9
    assert np.all(np.diff(branch.s) > 0)
    folds = fold_from_branch(branch)
    assert len(folds) == 1
    assert folds[0].lam == pytest.approx(LAMBDA_BRATU1, abs=1e-8)


def test_generator_can_be_stopped_early(bratu1):
    walker = branch_points(bratu1, initial_point(bratu1))
    first = [next(walker) for _ in range(3)]
    assert [p.s for p in first] == sorted(p.s for p in first)
    assert first[0].s == 0.0


def test_refine_fold_two_nodes(bratu2):
    x, lam, phi = refine_fold(bratu2, [1.1, 1.1], 3.3)
    assert_allclose(x, [1.0, 1.0], atol=1e-8)
    assert lam == pytest.approx(9 / np.e, abs=1e-10)
    J = bratu2.jac_x(x, lam)
    assert np.linalg.norm(J @ phi) <= 1e-8


def test_detect_folds():
    assert detect_folds([1.0, 0.5, -0.5, -1.0]) == [1]
    assert detect_folds([1.0, 0.0, -1.0]) == [0]
    assert detect_folds([1e-12, -1e-12, 1e-12]) == []
    assert detect_folds([0.3, -0.2, 0.1]) == [0, 1]


def test_branch_csv(bratu1_branch, tmp_path):
    path = tmp_path / "branch.csv"
    bratu1_branch.to_csv(path)
    with path.open() as file:
        rows = list(csv.reader(file))
    assert rows[0] == ["s", "lambda", "x_1", "tangent_lambda"]
    assert len(rows) == len(bratu1_branch) + 1
    assert float(rows[1][1]) == bratu1_branch.lambdas[0]


def test_summary(bratu1_branch):
    summary = bratu1_branch.summary()
    assert summary["points"] == len(bratu1_branch)
    assert summary["lambda_range"][1] <= LAMBDA_BRATU1 + 1e-9


def test_start_checks(bratu1):
    with pytest.raises(StartInfeasible):
        polish_start(bratu1, [-1.0], 1.0)
    with pytest.raises(StartInfeasible):
        polish_start(bratu1, [1.0], 0.5)
    with pytest.raises(UsageError):
        ContinuationConfig(step=0.0)
    with pytest.raises(UsageError):
        ContinuationConfig(direction=0)
