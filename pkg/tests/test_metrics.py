import numpy as np
import pytest

from rigidpose.errors import EmptyMaskError, RigidPoseError
from rigidpose.geometry import CorrespondenceSet, DepthMap, Pose, PoseError, random_rotation, weighted_kabsch
from rigidpose.metrics import (
    aggregate,
    cumulative_histogram,
    depth_stats,
    endpoint_errors,
    lower_median,
    pooled_depth_stats,
)

from conftest import noisy_instance


def _errs(pairs):
    return [PoseError(p, r) for p, r in pairs]


def test_aggregate_examples():
    s = aggregate(_errs([(0, 0)]))
    assert s.accuracy == 1.0 and s.median_position_m == 0 and s.median_rotation_deg == 0
    assert aggregate(_errs([(0.04, 4), (0.06, 4), (0.04, 6), (0.2, 20)])).accuracy == 0.25
    s = aggregate(_errs([(0.1, 1), (0.2, 2), (0.3, 3)]))
    assert (s.median_position_m, s.median_rotation_deg) == (0.2, 2)


def test_aggregate_threshold_is_strict():
    assert aggregate(_errs([(0.05, 1.0)])).accuracy == 0.0
    assert aggregate(_errs([(0.01, 5.0)])).accuracy == 0.0


def test_aggregate_empty():
    with pytest.raises(RigidPoseError):
        aggregate([])


def test_lower_median_even_count():
    assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0


def test_aggregate_permutation_invariant_and_monotone(rng):
    errs = _errs(zip(rng.uniform(0, 0.2, 101), rng.uniform(0, 20, 101)))
    s = aggregate(errs)
    t = aggregate([errs[i] for i in rng.permutation(101)])
    assert (t.median_position_m, t.median_rotation_deg, t.accuracy, t.count) == (
        s.median_position_m, s.median_rotation_deg, s.accuracy, s.count)
    assert t.mean_position_m == pytest.approx(s.mean_position_m, abs=1e-12)
    assert aggregate(errs, (0.03, 5.0)).accuracy <= s.accuracy
    assert aggregate(errs, (0.05, 2.0)).accuracy <= s.accuracy


def test_histogram_examples():
    h = cumulative_histogram(_errs([(0, 0)] * 3), "position", 1.0, 10)
    np.testing.assert_array_equal(h.fractions, 1.0)
    h = cumulative_histogram(_errs([(0.1, 0), (0.9, 0), (2.0, 0)]), "position", 1.0, 10)
    assert h.edges[-1] == 1.0 and h.fractions[-1] == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(RigidPoseError):
        cumulative_histogram([], "rotation")
    with pytest.raises(RigidPoseError):
        cumulative_histogram(_errs([(0, 0)]), "rotation", bins=0)


def test_histogram_monotone(rng):
    errs = _errs(zip(rng.exponential(0.3, 200), rng.exponential(8.0, 200)))
    for axis in ("position", "rotation"):
        h = cumulative_histogram(errs, axis)
        assert len(h.edges) == 101 and np.all(np.diff(h.fractions) >= 0) and h.fractions[-1] <= 1.0


def _depth_pair(rng, shape=(30, 40)):
    gt = rng.uniform(0.5, 4.0, shape)
    gt[rng.random(shape) < 0.2] = 0.0
    return DepthMap(gt + rng.normal(0.0, 0.3, shape)), DepthMap(gt)


def test_depth_stats_examples():
    gt = DepthMap(np.full((4, 4), 2.0))
    s = depth_stats(gt, gt)
    assert s.mean_abs_error_m == 0.0 and (s.acc_0125, s.acc_025, s.acc_05) == (1.0, 1.0, 1.0)
    s = depth_stats(DepthMap(np.full((4, 4), 2.2)), gt)
    assert (s.acc_0125, s.acc_025, s.acc_05) == (0.0, 1.0, 1.0)
    with pytest.raises(EmptyMaskError):
        depth_stats(gt, DepthMap(np.zeros((4, 4))))


def test_depth_stats_brute_force(rng):
    pred, gt = _depth_pair(rng)
    s = depth_stats(pred, gt)
    errs = [abs(p - g) for p, g in zip(pred.values.ravel(), gt.values.ravel()) if g > 0]
    assert s.count == len(errs)
    assert s.mean_abs_error_m == pytest.approx(sum(errs) / len(errs), abs=1e-12)
    for t, acc in zip((0.125, 0.25, 0.5), (s.acc_0125, s.acc_025, s.acc_05)):
        assert acc == sum(e < t for e in errs) / len(errs)
    assert s.acc_0125 <= s.acc_025 <= s.acc_05 <= 1.0


def test_pooled_depth_stats(rng):
    pairs = [_depth_pair(rng, (6, 8)) for _ in range(3)]
    pooled = pooled_depth_stats(pairs)
    assert pooled.count == sum(depth_stats(p, g).count for p, g in pairs)
    single = pooled_depth_stats(pairs[:1])
    assert single == depth_stats(*pairs[0])


def test_endpoint_errors_examples(rng):
    c, pose = noisy_instance(rng, n=12, sigma=0.0)
    np.testing.assert_allclose(endpoint_errors(c, pose), 0.0, atol=1e-12)
    a = rng.standard_normal((5, 3))
    shifted = CorrespondenceSet(a, a + [1.0, 0, 0])
    np.testing.assert_allclose(endpoint_errors(shifted, Pose.identity()), 1.0, rtol=1e-12)
    far = CorrespondenceSet(a, a + [2.5, 0, 0])
    np.testing.assert_allclose(endpoint_errors(far, Pose.identity(), clamp=1.0), 1.0)


def test_endpoint_errors_minimised_at_kabsch_pose(rng):
    c, _ = noisy_instance(rng, n=30, sigma=0.05)
    best = weighted_kabsch(c)
    f0 = np.sum(c.weights * endpoint_errors(c, best) ** 2)
    for _ in range(20):
        r = random_rotation(rng)
        p = Pose(r, best.translation + rng.standard_normal(3))
        assert f0 <= np.sum(c.weights * endpoint_errors(c, p) ** 2)
