"""Training losses and target normalization.

``l_geom`` is the geometry loss on scene coordinates and two depth scales,
``l_pose`` the L1 pose loss used for weight optimization. All L1 terms are
means over the averaged elements, which keeps loss magnitudes independent of
resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyMaskError, RigidPoseError, ShapeMismatchError
from .geometry import DepthMap, Pose, SceneCoordinateMap


@dataclass(frozen=True)
class GeomLossConfig:
    use_validity_mask: bool = False
    half_res_weight: float = 0.5

    def __post_init__(self):
        if not self.half_res_weight >= 0:
            raise ConfigError("half_res_weight must be >= 0")


@dataclass(frozen=True, eq=False)
class GeomMaps:
    """Scene coordinates ``(H, W, 3)``, depth ``(H, W)`` and half-res depth."""

    coords: np.ndarray
    depth: np.ndarray
    depth_half: np.ndarray

    def __post_init__(self):
        c = np.asarray(getattr(self.coords, "values", self.coords), dtype=np.float64)
        d = np.asarray(getattr(self.depth, "values", self.depth), dtype=np.float64)
        dh = np.asarray(getattr(self.depth_half, "values", self.depth_half), dtype=np.float64)
        h, w = d.shape
        if c.shape != (h, w, 3):
            raise ShapeMismatchError(f"coords shape {c.shape} does not match depth {d.shape}")
        if dh.shape != (h // 2, w // 2):
            raise ShapeMismatchError(f"half-res depth must be {(h // 2, w // 2)}, got {dh.shape}")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "depth_half", dh)


@dataclass(frozen=True)
class NormalizationState:
    depth_mean: float
    scene_coord_mean: tuple[float, float, float]


def _masked_l1(x: np.ndarray, y: np.ndarray, mask: np.ndarray | None) -> float:
    diff = np.abs(x - y)
    if mask is None:
        return float(np.mean(diff))
    if not np.any(mask):
        raise EmptyMaskError("validity mask selects no pixels")
    return float(np.mean(diff[mask]))


def _half_mask(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    return mask[: h // 2 * 2, : w // 2 * 2].reshape(h // 2, 2, w // 2, 2).any(axis=(1, 3))


def l_geom(
    pred: GeomMaps,
    target: GeomMaps,
    cfg: GeomLossConfig = GeomLossConfig(),
    validity: np.ndarray | None = None,
) -> float:
    """``|C - C^|_1 + |D - D^|_1 + alpha |D_half - D^_half|_1``.

    Without the validity mask every pixel counts, so invalid targets (stored as
    zeros) are regressed too. With it, each term averages only valid pixels;
    ``validity`` defaults to ``target.depth > 0`` and a half-res pixel is valid
    when any pixel of its 2x2 block is.
    """
    if pred.depth.shape != target.depth.shape:
        raise ShapeMismatchError("prediction and target resolutions differ")
    mask = mask_half = None
    if cfg.use_validity_mask:
        mask = target.depth > 0 if validity is None else np.asarray(validity, dtype=bool)
        if mask.shape != target.depth.shape:
            raise ShapeMismatchError("validity mask shape does not match depth")
        mask_half = _half_mask(mask)
    coords_term = _masked_l1(pred.coords, target.coords, None if mask is None else mask)
    depth_term = _masked_l1(pred.depth, target.depth, mask)
    half_term = _masked_l1(pred.depth_half, target.depth_half, mask_half)
    return coords_term + depth_term + cfg.half_res_weight * half_term


def l_pose(est: Pose, gt: Pose) -> float:
    """Elementwise L1 over the 9 rotation and 3 translation entries."""
    return float(
        np.sum(np.abs(est.rotation - gt.rotation)) + np.sum(np.abs(est.translation - gt.translation))
    )


def l_pose_grad(est: Pose, gt: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Subgradient of :func:`l_pose` w.r.t. the estimate (0 where entries tie)."""
    return np.sign(est.rotation - gt.rotation), np.sign(est.translation - gt.translation)


def normalize_targets(
    depth: DepthMap, coords: SceneCoordinateMap
) -> tuple[DepthMap, SceneCoordinateMap, NormalizationState]:
    """Scale depth by its valid mean and centre scene coordinates.

    Invalid pixels (depth <= 0) keep their stored values and are excluded
    from both means.
    """
    if coords.values.shape[:2] != depth.values.shape:
        raise ShapeMismatchError("depth and scene-coordinate maps differ in size")
    valid = depth.valid
    if not np.any(valid):
        raise EmptyMaskError("no valid depth pixels to normalize against")
    depth_mean = float(np.mean(depth.values[valid]))
    coord_mean = np.mean(coords.values[valid] + coords.mean_offset, axis=0)

    d = depth.values.copy()
    d[valid] /= depth_mean
    c = coords.values + coords.mean_offset
    c[valid] -= coord_mean
    c[~valid] = coords.values[~valid]
    state = NormalizationState(depth_mean, tuple(float(x) for x in coord_mean))
    return DepthMap(d), SceneCoordinateMap(c, coord_mean), state


def denormalize(
    depth: DepthMap, coords: SceneCoordinateMap, state: NormalizationState
) -> tuple[DepthMap, SceneCoordinateMap]:
    """Inverse of :func:`normalize_targets` on valid pixels."""
    if not state.depth_mean > 0:
        raise RigidPoseError("depth_mean must be positive")
    valid = depth.valid
    d = depth.values.copy()
    d[valid] *= state.depth_mean
    c = coords.values.copy()
    c[valid] += np.asarray(state.scene_coord_mean)
    return DepthMap(d), SceneCoordinateMap(c)


def downsample_half(depth: DepthMap) -> DepthMap:
    """2x2 block mean over valid pixels; all-invalid blocks become 0."""
    h, w = depth.values.shape
    if h % 2 or w % 2:
        raise ShapeMismatchError(f"downsampling needs even dimensions, got {w}x{h}")
    blocks = depth.values.reshape(h // 2, 2, w // 2, 2)
    valid = blocks > 0
    count = valid.sum(axis=(1, 3))
    total = np.where(valid, blocks, 0.0).sum(axis=(1, 3))
    out = np.divide(total, count, out=np.zeros_like(total), where=count > 0)
    return DepthMap(out)
