import numpy as np
import pytest

from rigidpose.errors import DegenerateConfigurationError, DegenerateGradientError
from rigidpose.geometry import CorrespondenceSet, Pose, rot_z, solve_kabsch, transform, weighted_kabsch
from rigidpose.kabsch_grad import (
    finite_diff_gradient,
    grad_check,
    kabsch_vjp,
    l_pose_value_and_grad,
    pose_jacobians,
    random_instance,
    random_target,
)
from rigidpose.objectives import l_pose

from conftest import noisy_instance


def test_finite_diff_quadratic():
    g = finite_diff_gradient(lambda x: float(x @ x), [1.0, 2.0], h=1e-6)
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-6)


def test_finite_diff_constant():
    np.testing.assert_array_equal(finite_diff_gradient(lambda x: 3.0, np.ones(4)), np.zeros(4))


def test_finite_diff_propagates_nonfinite():
    with pytest.raises(FloatingPointError):
        finite_diff_gradient(lambda x: float("nan"), [1.0])


def test_finite_diff_matches_objective_derivative(rng):
    # d/db_i sum_j w_j |b_j - R a_j - T|^2 = 2 w_i r_i
    c, pose = noisy_instance(rng, n=6, sigma=0.1)
    a, w = c.camera_points, c.weights

    def f(x):
        r = x.reshape(-1, 3) - transform(pose, a)
        return float(np.sum(w * np.sum(r * r, axis=1)))

    b = c.scene_points.ravel()
    expected = 2.0 * w[:, None] * (c.scene_points - transform(pose, a))
    np.testing.assert_allclose(finite_diff_gradient(f, b, h=1e-6), expected.ravel(), atol=1e-7)


def test_finite_diff_one_sided_at_bound():
    g = finite_diff_gradient(lambda x: float(np.sqrt(x[0] + 1.0) if x[0] >= 0 else np.nan), [0.0], h=1e-4, lower_bounds=[0.0])
    assert g[0] == pytest.approx(0.5, abs=1e-7)


def test_gradient_zero_at_exact_fit(rng):
    a = rng.standard_normal((30, 3))
    gt = Pose(np.eye(3), [0.5, -1.0, 2.0])
    c = CorrespondenceSet(a, transform(gt, a), 1.0 - rng.random(30))
    est = weighted_kabsch(c)
    loss, g = l_pose_value_and_grad(c, est)
    assert loss == 0.0
    for part in g:
        assert np.max(np.abs(part)) <= 1e-9


def test_vjp_matches_finite_differences(rng):
    c = random_instance(rng, 50, noise=0.01)
    report = grad_check(c, seed=3, max_params=None)
    assert report.n_checked == 7 * 50
    assert report.max_relative_error <= 1e-4


def test_duplicate_pairs_get_equal_weight_gradients(rng):
    c = random_instance(rng, 20, noise=0.05)
    a = np.vstack([c.camera_points, c.camera_points[:1]])
    b = np.vstack([c.scene_points, c.scene_points[:1]])
    w = np.append(c.weights, c.weights[0])
    dup = CorrespondenceSet(a, b, w)
    _, g = l_pose_value_and_grad(dup, random_target(weighted_kabsch(dup), rng))
    assert g.weights[0] == pytest.approx(g.weights[-1], rel=1e-12, abs=1e-15)


def test_grad_check_with_zero_weight(rng):
    c = random_instance(rng, 30, noise=0.02, zero_weights=1)
    assert np.count_nonzero(c.weights == 0) == 1
    assert grad_check(c, seed=11, max_params=None).max_relative_error <= 1e-4


def test_grad_check_minimal_instance(rng):
    c = random_instance(rng, 3, noise=0.01)
    assert grad_check(c, seed=5).max_relative_error <= 1e-4


def test_grad_check_degenerate_instance():
    line = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    with pytest.raises(DegenerateConfigurationError):
        grad_check(CorrespondenceSet(line, line + 1.0), seed=0)


def test_reflected_branch_matches_finite_differences(rng):
    a = rng.standard_normal((25, 3)) * [2.0, 1.0, 0.4]
    b = a * [1.0, 1.0, -1.0] + 0.05 * rng.standard_normal((25, 3))
    c = CorrespondenceSet(a, b, 1.0 - rng.random(25))
    assert solve_kabsch(c).d == -1.0
    assert grad_check(c, seed=2, max_params=None).max_relative_error <= 1e-4


def test_near_equal_singular_values_under_reflection_raise():
    a = np.array([[2, 0, 0], [-2, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    c = CorrespondenceSet(a, a * [1.0, 1.0, -1.0])
    with pytest.raises(DegenerateGradientError):
        kabsch_vjp(c, np.ones(9), np.zeros(3))


def test_weight_gradient_orthogonal_to_weights(rng):
    for _ in range(20):
        c = random_instance(rng, 40, noise=0.05)
        _, g = l_pose_value_and_grad(c, random_target(weighted_kabsch(c), rng))
        assert abs(g.weights @ c.weights) <= 1e-6


def test_descent_step_does_not_increase_loss(rng):
    for _ in range(20):
        c = random_instance(rng, 40, noise=0.05)
        target = random_target(weighted_kabsch(c), rng)
        loss, g = l_pose_value_and_grad(c, target)
        step = 1e-2 / max(np.max(np.abs(g.weights)), 1e-12)
        for _ in range(30):
            w = np.clip(c.weights - step * g.weights, 0.0, None)
            new = l_pose(weighted_kabsch(c.with_weights(w)), target)
            if new <= loss:
                break
            step *= 0.5
        assert new <= loss


def test_pose_jacobians_match_finite_differences(rng):
    c = random_instance(rng, 8, noise=0.05)
    jac = pose_jacobians(c)
    assert jac.d_rotation_d_weight.shape == (8, 9)
    assert jac.d_translation_d_weight.shape == (8, 3)

    def entry(k):
        def f(w):
            p = weighted_kabsch(c.with_weights(w))
            return np.concatenate([p.rotation.ravel(), p.translation])[k]

        return f

    for k in range(12):
        num = finite_diff_gradient(entry(k), c.weights, h=1e-6)
        ana = jac.d_rotation_d_weight[:, k] if k < 9 else jac.d_translation_d_weight[:, k - 9]
        np.testing.assert_allclose(ana, num, atol=1e-7)


def test_repeated_singular_values_without_reflection_are_fine(rng):
    # equal singular values only matter when the reflection fix flips one of them
    a = np.array([[2, 0, 0], [-2, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
    pose = Pose(rot_z(30), [0.1, 0.2, 0.3])
    c = CorrespondenceSet(a, transform(pose, a))
    s = solve_kabsch(c).s
    assert s[1] == pytest.approx(s[2], rel=1e-12)
    assert grad_check(c, seed=4, max_params=None).max_relative_error <= 1e-4
