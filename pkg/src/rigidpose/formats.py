"""Readers and writers for correspondence, pose, depth, weight and frame files.

Floats are written with 17 significant digits (or Python's round-tripping
``repr`` inside JSON), so text round trips are exact and output bytes depend
only on the values.
"""

from __future__ import annotations

import base64
import csv
import io
import json
import math
import warnings
from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import (
    CameraIntrinsics,
    CorrespondenceSet,
    DepthMap,
    Pose,
    SceneCoordinateMap,
    nearest_rotation,
    rotation_defect,
)
from .synth import FrameSample

CORRESPONDENCE_HEADER = ["ax", "ay", "az", "bx", "by", "bz", "w"]
WEIGHTS_HEADER = ["w"]
ROTATION_WARN_TOL = 1e-6
ROTATION_REJECT_TOL = 1e-3
DEPTH_INVALID = (0, 65535)
FRAME_FORMAT = "rigidpose.frame"
FRAME_VERSION = 1


class PoseToleranceWarning(UserWarning):
    pass


def fmt(x: float) -> str:
    return "%.17g" % x


def _parse_float(token: str, path, line: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"not a number: {token!r}", path, line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {token!r}", path, line)
    return value


def _write_text(path, text: str) -> None:
    Path(path).write_bytes(text.encode("utf-8"))


def _read_text(path) -> str:
    try:
        return Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError("file is not valid UTF-8", path, offset=e.start) from None


# -- correspondences -------------------------------------------------------


def save_correspondences(path, c: CorrespondenceSet) -> None:
    rows = [",".join(CORRESPONDENCE_HEADER)]
    for a, b, w in zip(c.camera_points, c.scene_points, c.weights):
        rows.append(",".join(fmt(x) for x in (*a, *b, w)))
    _write_text(path, "\n".join(rows) + "\n")


def _read_csv(path, header: list[str]) -> list[tuple[int, list[str]]]:
    text = _read_text(path)
    reader = csv.reader(io.StringIO(text))
    rows = []
    for row in reader:
        if not row or all(not cell.strip() for cell in row):
            continue
        rows.append((reader.line_num, [cell.strip() for cell in row]))
    if not rows or rows[0][1] != header:
        found = rows[0][1] if rows else []
        raise ParseError(f"expected header {','.join(header)}, found {','.join(found)!r}", path, 1)
    return rows[1:]


def load_correspondences(path) -> CorrespondenceSet:
    rows = _read_csv(path, CORRESPONDENCE_HEADER)
    data = np.empty((len(rows), 7))
    for k, (line, cells) in enumerate(rows):
        if len(cells) != 7:
            raise ParseError(f"expected 7 fields, got {len(cells)}", path, line)
        data[k] = [_parse_float(cell, path, line) for cell in cells]
        if data[k, 6] < 0:
            raise ParseError("weight must be >= 0", path, line)
    return CorrespondenceSet(data[:, 0:3], data[:, 3:6], data[:, 6])


def save_weights(path, weights) -> None:
    rows = ["w"] + [fmt(w) for w in np.asarray(weights, dtype=np.float64)]
    _write_text(path, "\n".join(rows) + "\n")


def load_weights(path) -> np.ndarray:
    rows = _read_csv(path, WEIGHTS_HEADER)
    out = np.empty(len(rows))
    for k, (line, cells) in enumerate(rows):
        if len(cells) != 1:
            raise ParseError(f"expected 1 field, got {len(cells)}", path, line)
        out[k] = _parse_float(cells[0], path, line)
        if out[k] < 0:
            raise ParseError("weight must be >= 0", path, line)
    return out


# -- poses -----------------------------------------------------------------


def checked_pose(rotation, translation, path=None, line: int | None = None) -> Pose:
    """Build a pose from loaded values.

    Rotations off by more than 1e-3 are rejected, more than 1e-6 warn, and
    anything not exact to 1e-9 is projected onto the nearest rotation.
    """
    r = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
        raise ParseError("pose contains non-finite values", path, line)
    defect = max(rotation_defect(r))
    if defect > ROTATION_REJECT_TOL:
        raise ParseError(f"not a proper rotation (defect {defect:.3g})", path, line)
    if defect > ROTATION_WARN_TOL:
        warnings.warn(f"{path}: rotation defect {defect:.3g}; re-orthonormalized", PoseToleranceWarning)
    if defect > 1e-9:
        r = nearest_rotation(r)
    return Pose(r, t)


def save_pose_txt(path, pose: Pose) -> None:
    rows = [" ".join(fmt(x) for x in row) for row in pose.matrix()]
    _write_text(path, "\n".join(rows) + "\n")


def load_pose_txt(path) -> Pose:
    """Read a 4x4 camera-to-scene matrix, one row per line."""
    lines = [(i + 1, ln) for i, ln in enumerate(_read_text(path).splitlines()) if ln.strip()]
    if len(lines) != 4:
        raise ParseError(f"expected 4 matrix rows, found {len(lines)}", path)
    m = np.empty((4, 4))
    for k, (line, text) in enumerate(lines):
        tokens = text.split()
        if len(tokens) != 4:
            raise ParseError(f"expected 4 values, got {len(tokens)}", path, line)
        m[k] = [_parse_float(tok, path, line) for tok in tokens]
    if np.max(np.abs(m[3] - [0.0, 0.0, 0.0, 1.0])) > ROTATION_REJECT_TOL:
        raise ParseError("last row must be 0 0 0 1", path, lines[3][0])
    return checked_pose(m[:3, :3], m[:3, 3], path)


def pose_to_dict(pose: Pose) -> dict:
    return {
        "rotation": [float(x) for x in pose.rotation.ravel()],
        "translation": [float(x) for x in pose.translation],
    }


def pose_from_dict(d: dict, path=None) -> Pose:
    try:
        r, t = d["rotation"], d["translation"]
    except (KeyError, TypeError):
        raise ParseError("pose needs 'rotation' and 'translation'", path) from None
    r = np.asarray(r, dtype=np.float64)
    if r.size != 9 or len(t) != 3:
        raise ParseError("rotation needs 9 values and translation 3", path)
    return checked_pose(r, t, path)


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def load_json(path) -> dict:
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, path, e.lineno, e.pos) from None


def save_pose_json(path, pose: Pose, objective: float | None = None) -> None:
    d = pose_to_dict(pose)
    if objective is not None:
        d["objective"] = float(objective)
    _write_text(path, dumps_json(d))


def load_pose_json(path) -> Pose:
    return pose_from_dict(load_json(path), path)


# -- depth images ----------------------------------------------------------


def depth_to_millimeters(depth: DepthMap) -> np.ndarray:
    mm = np.rint(depth.values * 1000.0)
    valid = depth.valid & (mm >= 1)
    out = np.zeros(mm.shape, dtype=np.uint16)
    out[valid] = np.clip(mm[valid], 1, 65534).astype(np.uint16)
    return out


def millimeters_to_depth(mm: np.ndarray) -> DepthMap:
    mm = np.asarray(mm)
    d = mm.astype(np.float64) / 1000.0
    d[np.isin(mm, DEPTH_INVALID)] = 0.0
    return DepthMap(d)


def _write_pgm(path, mm: np.ndarray) -> None:
    h, w = mm.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + mm.astype(">u2").tobytes())


def _pgm_token(data: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        if data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif data[pos : pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("truncated PGM header", path, offset=start)
    return data[start:pos], pos


def _read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, pos = _pgm_token(data, 0, path)
    if magic != b"P5":
        raise ParseError(f"not a binary PGM (magic {magic!r})", path, offset=0)
    fields = []
    for _ in range(3):
        start = pos
        tok, pos = _pgm_token(data, pos, path)
        if not tok.isdigit():
            raise ParseError(f"bad PGM header field {tok!r}", path, offset=start)
        fields.append(int(tok))
    w, h, maxval = fields
    if w <= 0 or h <= 0:
        raise ParseError("PGM dimensions must be positive", path, offset=pos)
    if maxval != 65535:
        raise ParseError(f"expected 16-bit PGM (maxval 65535), got maxval {maxval}", path, offset=pos)
    pos += 1  # single whitespace byte before the raster
    raster = data[pos:]
    if len(raster) < 2 * w * h:
        raise ParseError(f"PGM raster truncated: {len(raster)} of {2 * w * h} bytes", path, offset=pos)
    return np.frombuffer(raster[: 2 * w * h], dtype=">u2").reshape(h, w).astype(np.uint16)


def save_depth_image(path, depth: DepthMap) -> None:
    """Write depth in millimeters as 16-bit PNG or binary PGM (by suffix)."""
    mm = depth_to_millimeters(depth)
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        _write_pgm(path, mm)
    elif suffix == ".png":
        from PIL import Image

        Image.fromarray(mm).save(path, format="PNG")
    else:
        raise ParseError(f"unsupported depth image suffix {suffix!r}", path)


def load_depth_image(path) -> DepthMap:
    """Read a millimeter depth image; 0 and 65535 become invalid pixels."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return millimeters_to_depth(_read_pgm(path))
    if suffix != ".png":
        raise ParseError(f"unsupported depth image suffix {suffix!r}", path)
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
                raise ParseError(f"expected a 16-bit single-channel PNG, got mode {img.mode}", path)
            mm = np.asarray(img)
    except UnidentifiedImageError:
        raise ParseError("not a readable PNG", path) from None
    if mm.size == 0:
        raise ParseError("empty depth image", path)
    if mm.min() < 0 or mm.max() > 65535:
        raise ParseError("depth values outside the 16-bit range", path)
    return millimeters_to_depth(mm.astype(np.uint16))


# -- frames ----------------------------------------------------------------


def _encode_grid(arr: np.ndarray) -> dict:
    if arr.dtype == bool:
        raw, dtype = arr.astype(np.uint8), "u1"
    else:
        raw, dtype = arr.astype("<f8"), "<f8"
    return {
        "dtype": dtype,
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(raw).tobytes()).decode("ascii"),
    }


def _decode_grid(d, path, name: str) -> np.ndarray:
    try:
        dtype, shape, data = d["dtype"], [int(x) for x in d["shape"]], d["data"]
        raw = base64.b64decode(data, validate=True)
    except (KeyError, TypeError, ValueError):
        raise ParseError(f"malformed grid {name!r}", path) from None
    if dtype not in ("<f8", "u1"):
        raise ParseError(f"grid {name!r} has unsupported dtype {dtype!r}", path)
    arr = np.frombuffer(raw, dtype=dtype)
    if arr.size != int(np.prod(shape)):
        raise ParseError(f"grid {name!r} holds {arr.size} values for shape {shape}", path)
    arr = arr.reshape(shape)
    if dtype == "u1":
        return arr.astype(bool)
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"grid {name!r} contains non-finite values", path)
    return arr.astype(np.float64)


def frame_to_dict(f: FrameSample) -> dict:
    return {
        "format": FRAME_FORMAT,
        "version": FRAME_VERSION,
        "frame_id": f.frame_id,
        "intrinsics": f.intrinsics.to_dict(),
        "bounds": [list(f.bounds[0]), list(f.bounds[1])],
        "gt_pose": pose_to_dict(f.gt_pose),
        "gt_coords_offset": [float(x) for x in f.gt_coords.mean_offset],
        "pred_coords_offset": [float(x) for x in f.pred_coords.mean_offset],
        "grids": {
            "gt_depth": _encode_grid(f.gt_depth.values),
            "gt_coords": _encode_grid(f.gt_coords.values),
            "pred_depth": _encode_grid(f.pred_depth.values),
            "pred_coords": _encode_grid(f.pred_coords.values),
            "outlier_mask": _encode_grid(f.outlier_mask),
            "validity_mask": _encode_grid(f.validity_mask),
        },
    }


def frame_from_dict(d: dict, path=None) -> FrameSample:
    if not isinstance(d, dict) or d.get("format") != FRAME_FORMAT:
        raise ParseError(f"not a {FRAME_FORMAT} container", path)
    if d.get("version") != FRAME_VERSION:
        raise ParseError(f"unsupported frame version {d.get('version')!r}", path)
    try:
        grids = {name: _decode_grid(g, path, name) for name, g in d["grids"].items()}
        intr = CameraIntrinsics.from_dict(d["intrinsics"])
        bounds = tuple(tuple(float(x) for x in b) for b in d["bounds"])
        return FrameSample(
            gt_pose=pose_from_dict(d["gt_pose"], path),
            gt_depth=DepthMap(grids["gt_depth"]),
            gt_coords=SceneCoordinateMap(grids["gt_coords"], d.get("gt_coords_offset")),
            pred_depth=DepthMap(grids["pred_depth"]),
            pred_coords=SceneCoordinateMap(grids["pred_coords"], d.get("pred_coords_offset")),
            outlier_mask=grids["outlier_mask"],
            validity_mask=grids["validity_mask"],
            intrinsics=intr,
            bounds=bounds,
            frame_id=str(d["frame_id"]),
        )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed frame container: {e}", path) from None


def save_frame(path, f: FrameSample) -> None:
    _write_text(path, dumps_json(frame_to_dict(f)))


def load_frame(path) -> FrameSample:
    return frame_from_dict(load_json(path), path)


def frame_paths(directory) -> list[Path]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise ParseError("no frame files (*.json) found", directory)
    return paths
