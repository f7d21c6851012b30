import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rigidpose.errors import ConfigError, EmptyMaskError, ShapeMismatchError
from rigidpose.geometry import DepthMap, Pose, SceneCoordinateMap, rot_z
from rigidpose.objectives import (
    GeomLossConfig,
    GeomMaps,
    denormalize,
    downsample_half,
    l_geom,
    l_pose,
    l_pose_grad,
    normalize_targets,
)


def _maps(rng, h=6, w=8):
    d = rng.uniform(0.5, 4.0, size=(h, w))
    return GeomMaps(rng.standard_normal((h, w, 3)), d, downsample_half(DepthMap(d)).values)


def test_l_geom_zero_for_identical(rng):
    m = _maps(rng)
    assert l_geom(m, m) == 0.0


def test_l_geom_depth_offset(rng):
    m = _maps(rng)
    shifted = GeomMaps(m.coords, m.depth + 0.5, m.depth_half)
    assert l_geom(shifted, m) == pytest.approx(0.5, abs=1e-12)


def test_l_geom_half_res_weight(rng):
    m = _maps(rng)
    shifted = GeomMaps(m.coords, m.depth, m.depth_half + 1.0)
    assert l_geom(shifted, m, GeomLossConfig(half_res_weight=0.5)) == pytest.approx(0.5, abs=1e-12)


def test_l_geom_shape_checks(rng):
    with pytest.raises(ShapeMismatchError):
        GeomMaps(np.zeros((6, 8, 3)), np.zeros((6, 8)), np.zeros((2, 2)))
    with pytest.raises(ConfigError):
        GeomLossConfig(half_res_weight=-1.0)


def _with_invalid(m, rng):
    d = m.depth.copy()
    d[:2, :] = 0.0
    c = m.coords.copy()
    c[:2, :] = 0.0
    return GeomMaps(c, d, downsample_half(DepthMap(d)).values)


def test_masked_loss_ignores_invalid_pixel_values(rng):
    target = _with_invalid(_maps(rng), rng)
    pred = _maps(rng)
    cfg = GeomLossConfig(use_validity_mask=True)
    base = l_geom(pred, target, cfg)

    c, d = pred.coords.copy(), pred.depth.copy()
    c[:2] = 100.0
    d[:2] = -7.0
    dh = pred.depth_half.copy()
    dh[0] = 9.0  # half-res row 0 comes from full-res rows 0-1, all invalid
    altered = GeomMaps(c, d, dh)
    assert l_geom(altered, target, cfg) == pytest.approx(base, abs=1e-12)
    assert l_geom(altered, target) != pytest.approx(l_geom(pred, target))


def test_masked_loss_empty_mask(rng):
    m = _maps(rng)
    target = GeomMaps(m.coords, np.zeros_like(m.depth), m.depth_half)
    with pytest.raises(EmptyMaskError):
        l_geom(m, target, GeomLossConfig(use_validity_mask=True))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_l_geom_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a, b = _maps(rng), _maps(rng)
    assert l_geom(a, b) == pytest.approx(l_geom(b, a), abs=1e-12)
    assert l_geom(a, b) > 0.0


def test_l_pose_examples():
    gt = Pose(rot_z(90), [0, 0, 0])
    assert l_pose(gt, gt) == 0.0
    assert l_pose(Pose.identity(), gt) == pytest.approx(4.0, abs=1e-12)
    assert l_pose(Pose(np.eye(3), [1, 0, 0]), gt) == pytest.approx(5.0, abs=1e-12)


def test_l_pose_grad_signs():
    g_r, g_t = l_pose_grad(Pose(np.eye(3), [1, 0, 0]), Pose.identity())
    np.testing.assert_array_equal(g_r, np.zeros((3, 3)))
    np.testing.assert_array_equal(g_t, [1, 0, 0])


def test_normalize_constant_depth():
    d, _, state = normalize_targets(DepthMap(np.full((4, 4), 2.0)), SceneCoordinateMap(np.zeros((4, 4, 3))))
    np.testing.assert_array_equal(d.values, 1.0)
    assert state.depth_mean == 2.0


def test_normalize_centres_coords(rng):
    coords = np.ones((4, 4, 3)) + 0.1 * rng.standard_normal((4, 4, 3))
    coords -= coords.mean(axis=(0, 1)) - 1.0
    _, c, state = normalize_targets(DepthMap(np.ones((4, 4))), SceneCoordinateMap(coords))
    np.testing.assert_allclose(state.scene_coord_mean, [1, 1, 1], atol=1e-12)
    np.testing.assert_allclose(c.values.sum(axis=(0, 1)), 0.0, atol=1e-12)


def test_normalize_round_trip(rng):
    depth = rng.uniform(0.5, 4.0, size=(6, 8))
    depth[0, :3] = 0.0
    coords = rng.uniform(-5, 5, size=(6, 8, 3))
    d, c, state = normalize_targets(DepthMap(depth), SceneCoordinateMap(coords))
    d2, c2 = denormalize(d, c, state)
    valid = depth > 0
    np.testing.assert_allclose(d2.values[valid], depth[valid], rtol=0, atol=1e-12)
    np.testing.assert_allclose(c2.values[valid], coords[valid], rtol=0, atol=1e-12)


def test_normalize_requires_valid_depth():
    with pytest.raises(EmptyMaskError):
        normalize_targets(DepthMap(np.zeros((2, 2))), SceneCoordinateMap(np.zeros((2, 2, 3))))


def test_downsample_examples():
    np.testing.assert_array_equal(downsample_half(DepthMap(np.full((4, 6), 3.0))).values, np.full((2, 3), 3.0))
    assert downsample_half(DepthMap([[1.0, 3.0], [5.0, 7.0]])).values.tolist() == [[4.0]]
    assert downsample_half(DepthMap([[1.0, 0.0], [0.0, 0.0]])).values.tolist() == [[1.0]]
    assert downsample_half(DepthMap(np.zeros((2, 2)))).values.tolist() == [[0.0]]


def test_downsample_odd_dimensions():
    with pytest.raises(ShapeMismatchError):
        downsample_half(DepthMap(np.ones((3, 4))))
