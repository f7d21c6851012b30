"""Exception types raised across the package.

Every error carries a short ``code`` string so the CLI can report it in a
machine-parseable form.
"""

from __future__ import annotations


class RigidPoseError(ValueError):
    code = "rigidpose-error"


class InvalidDepthError(RigidPoseError):
    code = "invalid-depth"


class DegenerateWeightsError(RigidPoseError):
    code = "degenerate-weights"


class InsufficientPointsError(RigidPoseError):
    code = "insufficient-points"


class DegenerateConfigurationError(RigidPoseError):
    code = "degenerate-configuration"


class DegenerateGradientError(RigidPoseError):
    """Singular values too close together for a stable SVD derivative."""

    code = "degenerate-svd-gradient"


class EmptyMaskError(RigidPoseError):
    code = "empty-mask"


class InvalidRotationError(RigidPoseError):
    code = "invalid-rotation"


class ShapeMismatchError(RigidPoseError):
    code = "shape-mismatch"


class ConfigError(RigidPoseError):
    code = "invalid-config"


class ParseError(RigidPoseError):
    """Malformed input file. ``line`` is 1-based, ``offset`` a byte offset."""

    code = "parse-error"

    def __init__(self, message: str, path=None, line: int | None = None, offset: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        self.offset = offset
        where = []
        if self.path:
            where.append(self.path)
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
