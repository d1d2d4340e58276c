# File: integrations/camera_io.py
import json
import logging
import math
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from schemas.errors import SchemaError, TruncatedFile
from schemas.scene_schema import Camera

logger = logging.getLogger(__name__)

DEFAULT_IMAGE_SIZE = 800
# OPENGL/BLENDER CAMERA AXES (y UP, z BACK) -> OURS (y DOWN, z FORWARD)
GL_TO_CV = np.diag([1.0, -1.0, -1.0, 1.0])


def fov_to_focal(fov: float, pixels: int) -> float:
    return pixels / (2.0 * math.tan(fov / 2.0))


def focal_to_fov(focal: float, pixels: int) -> float:
    return 2.0 * math.atan(pixels / (2.0 * focal))


def _frame_name(frame: dict, index: int) -> str:
    file_path = frame.get("file_path")
    if not file_path:
        return f"frame_{index:04d}"
    return Path(str(file_path)).stem


def read_cameras(path: Union[str, Path]) -> List[Camera]:
    """Read a NeRF-style transforms JSON: camera_angle_x plus camera-to-world matrices."""
    path = str(path)
    with open(path, encoding="utf-8") as f:
        text = f.read()
    try:
        contents = json.loads(text)
    except json.JSONDecodeError as e:
        raise TruncatedFile(f"invalid JSON: {e.msg}", path=path, line=e.lineno, offset=e.pos)
    if not isinstance(contents, dict):
        raise SchemaError("frames", path=path, detail="top level must be an object")
    if "camera_angle_x" not in contents:
        raise SchemaError("camera_angle_x", path=path)
    if not isinstance(contents.get("frames"), list):
        raise SchemaError("frames", path=path)

    width = int(contents.get("w", DEFAULT_IMAGE_SIZE))
    height = int(contents.get("h", width))
    fx = fov_to_focal(float(contents["camera_angle_x"]), width)
    fy = fov_to_focal(float(contents["camera_angle_y"]), height) if "camera_angle_y" in contents else fx
    cx = float(contents.get("cx", width / 2.0))
    cy = float(contents.get("cy", height / 2.0))
    near = float(contents.get("near", 0.01))

    cameras = []
    for index, frame in enumerate(contents["frames"]):
        if "transform_matrix" not in frame:
            raise SchemaError(f"frames[{index}].transform_matrix", path=path)
        c2w = np.array(frame["transform_matrix"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise SchemaError(f"frames[{index}].transform_matrix", path=path, detail="must be 4x4")
        w2c = np.linalg.inv(c2w @ GL_TO_CV)
        cameras.append(
            Camera(
                name=_frame_name(frame, index),
                world_to_camera=w2c,
                fx=fx,
                fy=fy,
                cx=cx,
                cy=cy,
                width=width,
                height=height,
                near=near,
            )
        )
    logger.info(f"✅ Read {len(cameras)} cameras from {path}")
    return cameras


def write_cameras(path: Union[str, Path], cameras: Sequence[Camera]) -> None:
    """Inverse of `read_cameras`; all cameras must share intrinsics."""
    if not cameras:
        raise SchemaError("frames", detail="no cameras to write")
    first = cameras[0]
    contents = {
        "camera_angle_x": focal_to_fov(first.fx, first.width),
        "camera_angle_y": focal_to_fov(first.fy, first.height),
        "w": first.width,
        "h": first.height,
        "cx": first.cx,
        "cy": first.cy,
        "near": first.near,
        "frames": [
            {
                "file_path": f"./{cam.name}",
                "transform_matrix": (np.linalg.inv(cam.world_to_camera) @ GL_TO_CV).tolist(),
            }
            for cam in cameras
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(contents, f, indent=2)
