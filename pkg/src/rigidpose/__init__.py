"""Direct camera pose estimation from dense 3D-3D correspondences.

Depth is unprojected into camera-frame points, paired with regressed scene
coordinates, weighted per correspondence and aligned with a differentiable
weighted Kabsch solve.
"""

from .errors import RigidPoseError
from .geometry import (
    CameraIntrinsics,
    CorrespondenceSet,
    DepthMap,
    Pose,
    PoseError,
    SceneCoordinateMap,
    compose,
    invert,
    pose_error,
    rotation_angle_deg,
    transform,
    unproject,
    unproject_map,
    weighted_centroids,
    weighted_kabsch,
)
from .kabsch_grad import finite_diff_gradient, grad_check, kabsch_vjp

__version__ = "0.1.0"
