"""Ground-truth frames from 7-Scenes-style depth images and pose files."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import EmptyMaskError
from .geometry import CameraIntrinsics, DepthMap, Pose, SceneCoordinateMap
from .formats import load_depth_image, load_pose_txt
from .synth import FrameSample, scene_coordinates


def depth_to_scene_coords(
    depth: DepthMap, pose: Pose, intr: CameraIntrinsics
) -> tuple[SceneCoordinateMap, np.ndarray]:
    """Scene coordinates ``R K^-1 d u + T`` per valid pixel, plus the validity mask.

    Invalid pixels are zero-filled.
    """
    valid = depth.valid
    if not np.any(valid):
        raise EmptyMaskError("depth map has no valid pixels")
    return scene_coordinates(pose, intr, depth), valid


def load_gt_frame(depth_path, pose_path, intr: CameraIntrinsics, frame_id: str | None = None) -> FrameSample:
    """Frame whose predictions equal the ground truth read from disk."""
    depth = load_depth_image(depth_path)
    pose = load_pose_txt(pose_path)
    coords, valid = depth_to_scene_coords(depth, pose, intr)
    return FrameSample(
        gt_pose=pose,
        gt_depth=depth,
        gt_coords=coords,
        pred_depth=depth,
        pred_coords=coords,
        outlier_mask=np.zeros(valid.shape, dtype=bool),
        validity_mask=valid,
        intrinsics=intr,
        frame_id=frame_id or Path(depth_path).stem,
    )
