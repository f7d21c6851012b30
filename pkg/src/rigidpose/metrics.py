"""Pose and depth evaluation statistics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyMaskError, RigidPoseError, ShapeMismatchError
from .geometry import CorrespondenceSet, DepthMap, Pose, PoseError, transform

POSITION_THRESHOLD_M = 0.05
ROTATION_THRESHOLD_DEG = 5.0
DEPTH_THRESHOLDS_M = (0.125, 0.25, 0.5)
HIST_TRUNCATION = {"position": 1.0, "rotation": 25.0}


@dataclass(frozen=True)
class ErrorStats:
    median_position_m: float
    median_rotation_deg: float
    mean_position_m: float
    mean_rotation_deg: float
    accuracy: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class CumulativeHistogram:
    axis: str
    edges: np.ndarray
    fractions: np.ndarray
    truncation: float


@dataclass(frozen=True)
class DepthStats:
    mean_abs_error_m: float
    acc_0125: float
    acc_025: float
    acc_05: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def lower_median(values) -> float:
    """Order statistic ``sorted(values)[(n - 1) // 2]``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise RigidPoseError("median of an empty sample")
    return float(v[(v.size - 1) // 2])


def aggregate(
    errors: Sequence[PoseError],
    thresholds: tuple[float, float] = (POSITION_THRESHOLD_M, ROTATION_THRESHOLD_DEG),
) -> ErrorStats:
    """Median/mean errors and the fraction of frames strictly within both thresholds."""
    if len(errors) == 0:
        raise RigidPoseError("cannot aggregate an empty error list")
    pos = np.array([e.position_m for e in errors], dtype=np.float64)
    rot = np.array([e.rotation_deg for e in errors], dtype=np.float64)
    hit = (pos < thresholds[0]) & (rot < thresholds[1])
    return ErrorStats(
        median_position_m=lower_median(pos),
        median_rotation_deg=lower_median(rot),
        mean_position_m=float(np.mean(pos)),
        mean_rotation_deg=float(np.mean(rot)),
        accuracy=float(np.count_nonzero(hit)) / len(errors),
        count=len(errors),
    )


def _axis_values(errors, axis: str) -> np.ndarray:
    if axis == "position":
        return np.array([e.position_m for e in errors], dtype=np.float64)
    if axis == "rotation":
        return np.array([e.rotation_deg for e in errors], dtype=np.float64)
    raise RigidPoseError(f"unknown histogram axis {axis!r}")


def cumulative_histogram(
    errors: Sequence[PoseError],
    axis: str,
    truncation: float | None = None,
    bins: int = 100,
) -> CumulativeHistogram:
    """Fraction of samples with error <= each of ``bins + 1`` edges on [0, truncation].

    Samples beyond the truncation limit never enter a bin; they only show up
    as the final fraction falling short of 1.
    """
    if bins < 1:
        raise RigidPoseError("bins must be >= 1")
    values = _axis_values(errors, axis)
    if values.size == 0:
        raise RigidPoseError("cannot build a histogram from no samples")
    limit = HIST_TRUNCATION[axis] if truncation is None else float(truncation)
    edges = np.linspace(0.0, limit, bins + 1)
    ordered = np.sort(values)
    counts = np.searchsorted(ordered, edges, side="right")
    return CumulativeHistogram(axis, edges, counts / values.size, limit)


def depth_stats(pred: DepthMap, gt: DepthMap, mask=None) -> DepthStats:
    """Depth error statistics over valid pixels (default: ground-truth depth > 0)."""
    p = pred.values
    g = gt.values
    if p.shape != g.shape:
        raise ShapeMismatchError(f"prediction {p.shape} and ground truth {g.shape} differ")
    valid = gt.valid if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != g.shape:
        raise ShapeMismatchError("mask shape does not match depth")
    if not np.any(valid):
        raise EmptyMaskError("no valid pixels for depth evaluation")
    err = np.abs(p[valid] - g[valid])
    n = err.size
    acc = [np.count_nonzero(err < t) / n for t in DEPTH_THRESHOLDS_M]
    return DepthStats(float(np.mean(err)), acc[0], acc[1], acc[2], n)


def pooled_depth_stats(pairs: Sequence[tuple[DepthMap, DepthMap]]) -> DepthStats:
    """Depth statistics with all valid pixels of several frames pooled."""
    errs = []
    for pred, gt in pairs:
        if pred.values.shape != gt.values.shape:
            raise ShapeMismatchError("prediction and ground truth differ in size")
        valid = gt.valid
        errs.append(np.abs(pred.values[valid] - gt.values[valid]))
    err = np.concatenate(errs) if errs else np.empty(0)
    if err.size == 0:
        raise EmptyMaskError("no valid pixels for depth evaluation")
    acc = [np.count_nonzero(err < t) / err.size for t in DEPTH_THRESHOLDS_M]
    return DepthStats(float(np.mean(err)), acc[0], acc[1], acc[2], err.size)


def endpoint_errors(c: CorrespondenceSet, pose: Pose, clamp: float | None = None) -> np.ndarray:
    """Per-correspondence distance ``|b_i - (R a_i + T)|``, optionally clamped."""
    e = np.linalg.norm(c.scene_points - transform(pose, c.camera_points), axis=1)
    return e if clamp is None else np.minimum(e, clamp)
