"""Closed-form rigid geometry: unprojection, transforms and weighted Kabsch.

Conventions
-----------
* A :class:`Pose` maps camera-frame points ``a`` to scene-frame points
  ``b = R a + T``. With ``a = 0`` this gives the camera centre, so
  ``translation`` is the camera position in the scene.
* Pixel ``(u, v)`` is the centre of column ``u`` and row ``v``; ``(0, 0)`` is
  the centre of the top-left pixel.
* SVD follows numpy: ``M = U @ diag(S) @ Vh`` with ``S`` descending and
  ``V = Vh.T``. The rotation is ``R = V diag(1, 1, d) U^T`` with
  ``d = det(V U^T)``.
* Everything is float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateConfigurationError,
    DegenerateWeightsError,
    InsufficientPointsError,
    InvalidDepthError,
    InvalidRotationError,
    ShapeMismatchError,
)

ROTATION_TOL = 1e-9
# second singular value below this fraction of the first means rank < 2
DEGENERACY_RATIO = 1e-12


def _frozen(x, shape=None) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ShapeMismatchError(f"expected shape {shape}, got {arr.shape}")
    arr.flags.writeable = False
    return arr


def rotation_defect(rotation: np.ndarray) -> tuple[float, float]:
    """Return ``(max|R^T R - I|, |det R - 1|)``."""
    r = np.asarray(rotation, dtype=np.float64)
    ortho = float(np.max(np.abs(r.T @ r - np.eye(3))))
    return ortho, abs(float(np.linalg.det(r)) - 1.0)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-scene transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidRotationError("pose contains non-finite values")
        ortho, det = rotation_defect(r)
        if ortho > ROTATION_TOL or det > ROTATION_TOL:
            raise InvalidRotationError(
                f"not a proper rotation (|R^T R - I| = {ortho:.3g}, |det - 1| = {det:.3g})"
            )
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape not in {(4, 4), (3, 4)}:
            raise ShapeMismatchError(f"expected a 4x4 or 3x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return bool(
            np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    __hash__ = None

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"])


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Paired camera-frame points ``a_i``, scene-frame points ``b_i`` and weights ``w_i``."""

    camera_points: np.ndarray
    scene_points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        a = _frozen(self.camera_points)
        b = _frozen(self.scene_points)
        if a.ndim != 2 or a.shape[1] != 3 or b.shape != a.shape:
            raise ShapeMismatchError(
                f"point arrays must both be (N, 3), got {a.shape} and {b.shape}"
            )
        w = np.ones(len(a)) if self.weights is None else self.weights
        w = _frozen(w)
        if w.shape != (len(a),):
            raise ShapeMismatchError(f"expected {len(a)} weights, got shape {w.shape}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(w))):
            raise ValueError("correspondences contain non-finite values")
        if np.any(w < 0):
            raise DegenerateWeightsError("weights must be non-negative")
        object.__setattr__(self, "camera_points", a)
        object.__setattr__(self, "scene_points", b)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def weight_matrix(self) -> np.ndarray:
        return np.diag(self.weights)

    def with_weights(self, weights) -> "CorrespondenceSet":
        return CorrespondenceSet(self.camera_points, self.scene_points, weights)

    def without(self, index) -> "CorrespondenceSet":
        keep = np.ones(len(self), dtype=bool)
        keep[index] = False
        return self.select(keep)

    def select(self, mask) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.camera_points[mask], self.scene_points[mask], self.weights[mask]
        )


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Row-major ``(height, width)`` depth grid in meters; values <= 0 are invalid."""

    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2 or v.size == 0:
            raise ShapeMismatchError(f"depth map must be a non-empty 2D grid, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("depth map contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True, eq=False)
class SceneCoordinateMap:
    """Row-major ``(height, width, 3)`` scene coordinates.

    ``mean_offset`` is the additive constant that was removed by normalization;
    add it back to get absolute scene coordinates.
    """

    values: np.ndarray
    mean_offset: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 3 or v.shape[2] != 3 or v.size == 0:
            raise ShapeMismatchError(f"scene coordinates must be (H, W, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("scene coordinates contain non-finite values")
        offset = np.zeros(3) if self.mean_offset is None else self.mean_offset
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mean_offset", _frozen(offset, (3,)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PoseError:
    position_m: float
    rotation_deg: float


def unproject(intr: CameraIntrinsics, pixel, depth: float) -> np.ndarray:
    """Camera-frame point ``d K^-1 (u, v, 1)^T`` for one pixel."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    u, v = float(pixel[0]), float(pixel[1])
    return np.array([depth * (u - intr.cx) / intr.fx, depth * (v - intr.cy) / intr.fy, depth])


def unproject_grid(intr: CameraIntrinsics, depth: DepthMap) -> np.ndarray:
    """Unproject every pixel; returns ``(H, W, 3)`` with zeros at invalid pixels."""
    d = depth.values
    v, u = np.mgrid[0 : depth.height, 0 : depth.width].astype(np.float64)
    pts = np.stack([d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d], axis=-1)
    pts[~depth.valid] = 0.0
    return pts


def unproject_map(intr: CameraIntrinsics, depth: DepthMap) -> tuple[np.ndarray, np.ndarray]:
    """Unproject the valid pixels of a depth map.

    Returns ``(indices, points)``: flat row-major pixel indices of every pixel
    with positive depth, and the matching ``(M, 3)`` camera-frame points.
    """
    flat_valid = depth.valid.ravel()
    indices = np.flatnonzero(flat_valid)
    points = unproject_grid(intr, depth).reshape(-1, 3)[indices]
    return indices, points


def transform(p: Pose, a) -> np.ndarray:
    """Apply ``R a + T`` to a single point or an ``(N, 3)`` array."""
    a = np.asarray(a, dtype=np.float64)
    return a @ p.rotation.T + p.translation


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def compose(p1: Pose, p2: Pose) -> Pose:
    """Pose that applies ``p2`` first, then ``p1``."""
    return Pose(p1.rotation @ p2.rotation, p1.rotation @ p2.translation + p1.translation)


def axis_angle(axis, angle_rad: float) -> np.ndarray:
    """Rotation matrix for a rotation of ``angle_rad`` about ``axis`` (Rodrigues)."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle_rad) * kx + (1.0 - math.cos(angle_rad)) * (kx @ kx)


def rot_x(deg: float) -> np.ndarray:
    return axis_angle((1.0, 0.0, 0.0), math.radians(deg))


def rot_y(deg: float) -> np.ndarray:
    return axis_angle((0.0, 1.0, 0.0), math.radians(deg))


def rot_z(deg: float) -> np.ndarray:
    return axis_angle((0.0, 0.0, 1.0), math.radians(deg))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def nearest_rotation(m) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    u, _, vh = np.linalg.svd(np.asarray(m, dtype=np.float64))
    d = 1.0 if np.linalg.det(u @ vh) > 0 else -1.0
    return u @ np.diag([1.0, 1.0, d]) @ vh


def weighted_centroids(c: CorrespondenceSet) -> tuple[np.ndarray, np.ndarray]:
    total = float(np.sum(c.weights))
    if not total > 0:
        raise DegenerateWeightsError("sum of weights must be positive")
    w = c.weights / total
    return w @ c.camera_points, w @ c.scene_points


class KabschSolution(NamedTuple):
    """Intermediate quantities of one weighted-Kabsch solve."""

    rotation: np.ndarray
    translation: np.ndarray
    mu_a: np.ndarray
    mu_b: np.ndarray
    weight_sum: float
    cross_covariance: np.ndarray  # H = A_bar^T W B_bar
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray
    d: float


def solve_kabsch(c: CorrespondenceSet) -> KabschSolution:
    if len(c) < 3:
        raise InsufficientPointsError(f"need at least 3 correspondences, got {len(c)}")
    mu_a, mu_b = weighted_centroids(c)
    a_bar = c.camera_points - mu_a
    b_bar = c.scene_points - mu_b
    h = (a_bar * c.weights[:, None]).T @ b_bar
    u, s, vh = np.linalg.svd(h)
    if s[1] < DEGENERACY_RATIO * (s[0] + 1e-300):
        raise DegenerateConfigurationError(
            "cross-covariance has rank < 2; points are collinear or coincident"
        )
    v = vh.T
    d = 1.0 if np.linalg.det(v @ u.T) > 0 else -1.0
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = mu_b - r @ mu_a
    return KabschSolution(r, t, mu_a, mu_b, float(np.sum(c.weights)), h, u, s, v, d)


def weighted_kabsch(c: CorrespondenceSet) -> Pose:
    """Pose minimizing ``sum_i w_i |b_i - R a_i - T|^2`` over proper rotations."""
    sol = solve_kabsch(c)
    return Pose(sol.rotation, sol.translation)


def weighted_objective(c: CorrespondenceSet, pose: Pose) -> float:
    r = c.scene_points - transform(pose, c.camera_points)
    return float(np.sum(c.weights * np.einsum("ij,ij->i", r, r)))


def rotation_angle_deg(r1, r2) -> float:
    """Geodesic angle between two rotations, in degrees, within [0, 180].

    Uses ``atan2(sin, cos)`` of the relative rotation ``R1^T R2`` with the
    cosine ``(trace - 1) / 2`` clamped to [-1, 1]. This equals
    ``arccos((trace - 1) / 2)`` but keeps full precision near 0 degrees, where
    arccos cannot resolve angles below ~1e-6 degrees.
    """
    m = np.asarray(r1, dtype=np.float64).T @ np.asarray(r2, dtype=np.float64)
    cos = min(1.0, max(-1.0, (np.trace(m) - 1.0) / 2.0))
    axis = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    sin = min(1.0, float(np.linalg.norm(axis)) / 2.0)
    return math.degrees(math.atan2(sin, cos))


def pose_error(est: Pose, gt: Pose) -> PoseError:
    return PoseError(
        position_m=float(np.linalg.norm(est.translation - gt.translation)),
        rotation_deg=rotation_angle_deg(est.rotation, gt.rotation),
    )
