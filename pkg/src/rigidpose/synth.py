"""Synthetic frames standing in for network depth / scene-coordinate outputs.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed,
spawn_key=(frame_index, stage))``: stage 0 drives frame geometry (pose and
depth field), stage 1 drives corruption. A frame is therefore a pure function
of ``(config, seed, frame_index)`` and frames can be generated in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, InsufficientPointsError
from .geometry import (
    CameraIntrinsics,
    CorrespondenceSet,
    DepthMap,
    Pose,
    SceneCoordinateMap,
    random_rotation,
    unproject_grid,
)

GEOMETRY_STREAM = 0
CORRUPTION_STREAM = 1
MAX_SINUSOIDS = 8

# 7-Scenes-like focal length scaled to the 80x60 output grid
DEFAULT_INTRINSICS = CameraIntrinsics(fx=73.125, fy=73.125, cx=39.5, cy=29.5)


def stream(seed: int, frame_index: int, stage: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(frame_index), int(stage))))
    )


@dataclass(frozen=True)
class SceneConfig:
    bounds: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (-5.0, -5.0, -5.0),
        (5.0, 5.0, 5.0),
    )
    depth_range: tuple[float, float] = (0.5, 4.0)
    resolution: tuple[int, int] = (80, 60)  # (width, height)
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS

    def __post_init__(self):
        lo, hi = (tuple(float(x) for x in b) for b in self.bounds)
        if len(lo) != 3 or len(hi) != 3 or any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError(f"invalid scene bounds {self.bounds}")
        dmin, dmax = (float(x) for x in self.depth_range)
        if not (dmin > 0 and dmax > dmin):
            raise ConfigError(f"invalid depth range {self.depth_range}")
        w, h = (int(x) for x in self.resolution)
        if w < 1 or h < 1 or w * h < 3:
            raise ConfigError(f"resolution {self.resolution} has fewer than 3 pixels")
        object.__setattr__(self, "bounds", (lo, hi))
        object.__setattr__(self, "depth_range", (dmin, dmax))
        object.__setattr__(self, "resolution", (w, h))

    def to_dict(self) -> dict:
        return {
            "bounds": [list(self.bounds[0]), list(self.bounds[1])],
            "depth_range": list(self.depth_range),
            "resolution": list(self.resolution),
            "intrinsics": self.intrinsics.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        unknown = set(d) - {"bounds", "depth_range", "resolution", "intrinsics"}
        if unknown:
            raise ConfigError(f"unknown scene keys: {sorted(unknown)}")
        kw = {}
        if "bounds" in d:
            kw["bounds"] = tuple(tuple(b) for b in d["bounds"])
        if "depth_range" in d:
            kw["depth_range"] = tuple(d["depth_range"])
        if "resolution" in d:
            kw["resolution"] = tuple(d["resolution"])
        if "intrinsics" in d:
            kw["intrinsics"] = CameraIntrinsics.from_dict(d["intrinsics"])
        return cls(**kw)


@dataclass(frozen=True)
class NoiseModel:
    depth_sigma: float = 0.0
    coord_sigma: float = 0.0
    outlier_fraction: float = 0.0
    invalid_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.depth_sigma < 0 or self.coord_sigma < 0:
            raise ConfigError("noise sigmas must be >= 0")
        for name in ("outlier_fraction", "invalid_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.outlier_fraction + self.invalid_fraction > 1.0:
            raise ConfigError("outlier_fraction + invalid_fraction exceeds 1")

    def to_dict(self) -> dict:
        return {
            "depth_sigma": self.depth_sigma,
            "coord_sigma": self.coord_sigma,
            "outlier_fraction": self.outlier_fraction,
            "invalid_fraction": self.invalid_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ConfigError(f"unknown noise keys: {sorted(unknown)}")
        return cls(**d)


def _flag_grid(x, shape) -> np.ndarray:
    arr = np.array(x, dtype=bool)
    if arr.shape != shape:
        raise ConfigError(f"mask shape {arr.shape} does not match {shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FrameSample:
    """Ground truth and (possibly corrupted) predictions for one frame."""

    gt_pose: Pose
    gt_depth: DepthMap
    gt_coords: SceneCoordinateMap
    pred_depth: DepthMap
    pred_coords: SceneCoordinateMap
    outlier_mask: np.ndarray
    validity_mask: np.ndarray
    intrinsics: CameraIntrinsics
    bounds: tuple = SceneConfig().bounds
    frame_id: str = "frame_0000"

    def __post_init__(self):
        shape = self.gt_depth.values.shape
        for m in (self.pred_depth, self.gt_coords, self.pred_coords):
            if m.values.shape[:2] != shape:
                raise ConfigError("frame grids differ in size")
        object.__setattr__(self, "outlier_mask", _flag_grid(self.outlier_mask, shape))
        object.__setattr__(self, "validity_mask", _flag_grid(self.validity_mask, shape))

    @property
    def resolution(self) -> tuple[int, int]:
        return self.gt_depth.width, self.gt_depth.height

    def inlier_mask(self) -> np.ndarray:
        """Flat row-major mask of valid, non-outlier pixels."""
        return (self.validity_mask & ~self.outlier_mask).ravel()

    def correspondence_validity(self, use_pred: bool = True) -> np.ndarray:
        depth = self.pred_depth if use_pred else self.gt_depth
        return (self.validity_mask & depth.valid).ravel()


def _depth_field(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    w, h = cfg.resolution
    lo, hi = cfg.depth_range
    mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
    k = int(rng.integers(1, MAX_SINUSOIDS + 1))
    base = mid + rng.uniform(-0.5, 0.5) * half
    amps = rng.uniform(0.0, 1.0, size=k) * half / k
    freqs = rng.uniform(-2.0, 2.0, size=(k, 2))  # cycles across the image
    phases = rng.uniform(0.0, 2.0 * math.pi, size=k)
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    depth = np.full((h, w), base)
    for amp, (fu, fv), phase in zip(amps, freqs, phases):
        depth += amp * np.sin(2.0 * math.pi * (fu * u / w + fv * v / h) + phase)
    return np.clip(depth, lo, hi)


def scene_coordinates(pose: Pose, intr: CameraIntrinsics, depth: DepthMap) -> SceneCoordinateMap:
    """Scene coordinates of every valid pixel; invalid pixels are zero."""
    cam = unproject_grid(intr, depth)
    coords = cam @ pose.rotation.T + pose.translation
    coords[~depth.valid] = 0.0
    return SceneCoordinateMap(coords)


def random_pose(cfg: SceneConfig, rng: np.random.Generator) -> Pose:
    """Random orientation; camera centre uniform in the middle half of the bounds."""
    lo, hi = (np.asarray(b) for b in cfg.bounds)
    centre, extent = (lo + hi) / 2.0, (hi - lo) / 4.0
    rot = random_rotation(rng)
    return Pose(rot, centre + rng.uniform(-1.0, 1.0, size=3) * extent)


def generate_frame(
    cfg: SceneConfig,
    pose: Pose | None = None,
    seed: int = 0,
    frame_index: int = 0,
    frame_id: str | None = None,
) -> FrameSample:
    """Noise-free frame; predictions start equal to ground truth."""
    rng = stream(seed, frame_index, GEOMETRY_STREAM)
    if pose is None:
        pose = random_pose(cfg, rng)
    depth = DepthMap(_depth_field(cfg, rng))
    coords = scene_coordinates(pose, cfg.intrinsics, depth)
    w, h = cfg.resolution
    return FrameSample(
        gt_pose=pose,
        gt_depth=depth,
        gt_coords=coords,
        pred_depth=depth,
        pred_coords=coords,
        outlier_mask=np.zeros((h, w), dtype=bool),
        validity_mask=depth.valid,
        intrinsics=cfg.intrinsics,
        bounds=cfg.bounds,
        frame_id=frame_id or f"frame_{frame_index:04d}",
    )


def _count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 0.5))


def corrupt(f: FrameSample, nm: NoiseModel, frame_index: int = 0) -> FrameSample:
    """Add Gaussian noise, scene-coordinate outliers and missing pixels.

    Outliers replace predicted scene coordinates with uniform samples inside
    the frame's bounds. Missing pixels (chosen among non-outliers) get zero
    depth and coordinates in both ground truth and prediction, and are marked
    invalid.
    """
    rng = stream(nm.seed, frame_index, CORRUPTION_STREAM)
    h, w = f.gt_depth.values.shape
    n = h * w

    valid = f.validity_mask.copy()
    gt_d = f.gt_depth.values.copy()
    gt_c = f.gt_coords.values.copy()
    pred_d = f.pred_depth.values + np.where(valid, nm.depth_sigma * rng.standard_normal((h, w)), 0.0)
    pred_c = f.pred_coords.values + nm.coord_sigma * rng.standard_normal((h, w, 3))

    outliers = np.zeros(n, dtype=bool)
    outliers[rng.choice(n, size=_count(nm.outlier_fraction, n), replace=False)] = True
    outliers = outliers.reshape(h, w) | f.outlier_mask
    lo, hi = (np.asarray(b) for b in f.bounds)
    samples = rng.uniform(lo, hi, size=(h, w, 3))
    pred_c[outliers] = samples[outliers]

    candidates = np.flatnonzero(~outliers.ravel())
    k = min(_count(nm.invalid_fraction, n), len(candidates))
    missing = np.zeros(n, dtype=bool)
    missing[rng.choice(candidates, size=k, replace=False)] = True
    missing = missing.reshape(h, w)
    valid &= ~missing
    for arr in (gt_d, pred_d, gt_c, pred_c):
        arr[missing] = 0.0

    return replace(
        f,
        gt_depth=DepthMap(gt_d),
        gt_coords=SceneCoordinateMap(gt_c, f.gt_coords.mean_offset),
        pred_depth=DepthMap(pred_d),
        pred_coords=SceneCoordinateMap(pred_c, f.pred_coords.mean_offset),
        outlier_mask=outliers,
        validity_mask=valid,
    )


def generate_frames(cfg: SceneConfig, nm: NoiseModel | None, seed: int, count: int) -> list[FrameSample]:
    """``count`` independent frames; corruption uses ``nm.seed`` if given."""
    frames = []
    for i in range(count):
        f = generate_frame(cfg, seed=seed, frame_index=i)
        if nm is not None:
            f = corrupt(f, nm, frame_index=i)
        frames.append(f)
    return frames


def to_correspondences(
    f: FrameSample, use_pred: bool = True, include_invalid: bool = True
) -> CorrespondenceSet:
    """One correspondence per pixel, in row-major order, all weights 1.

    With ``include_invalid`` (default) pixels lacking depth or validity stay
    in the set as zero-filled pairs, like an unmasked network predicting zeros
    there; otherwise they are dropped.
    """
    depth = f.pred_depth if use_pred else f.gt_depth
    coords = f.pred_coords if use_pred else f.gt_coords
    ok = f.correspondence_validity(use_pred)
    if np.count_nonzero(ok) < 3:
        raise InsufficientPointsError(f"frame {f.frame_id} has fewer than 3 valid pixels")
    cam = unproject_grid(f.intrinsics, depth).reshape(-1, 3)
    scene = (coords.values + coords.mean_offset).reshape(-1, 3)
    if include_invalid:
        cam = np.where(ok[:, None], cam, 0.0)
        scene = np.where(ok[:, None], scene, 0.0)
    else:
        cam, scene = cam[ok], scene[ok]
    return CorrespondenceSet(cam, scene, np.ones(len(cam)))
