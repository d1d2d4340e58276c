# File: integrations/ply_io.py
import io
import logging
from pathlib import Path
from typing import Union

import numpy as np
from plyfile import PlyData, PlyElement, PlyElementParseError, PlyHeaderParseError

from schemas.errors import BadRestCount, MissingProperty, TruncatedFile, UnsupportedFormat
from schemas.gaussian_schema import CloudRole, GaussianCloud, sh_degree_for_count

logger = logging.getLogger(__name__)

ALLOWED_REST_COUNTS = (0, 9, 24, 45)
REQUIRED_PROPERTIES = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


def _header_length(raw: bytes) -> int:
    marker = raw.find(b"end_header")
    if marker < 0:
        return len(raw)
    newline = raw.find(b"\n", marker)
    return len(raw) if newline < 0 else newline + 1


def read_gaussian_ply(path: Union[str, Path], role: CloudRole = CloudRole.unconstrained) -> GaussianCloud:
    """Read a binary little-endian 3D Gaussian PLY (f_rest stored channel-major)."""
    path = str(path)
    with open(path, "rb") as f:
        raw = f.read()
    try:
        ply = PlyData.read(io.BytesIO(raw))
    except PlyHeaderParseError as e:
        raise UnsupportedFormat(f"bad PLY header: {e}", path=path, line=getattr(e, "line", None))
    except PlyElementParseError as e:
        row = e.row or 0
        offset = None
        if e.element is not None:
            offset = _header_length(raw) + row * e.element.dtype("<").itemsize
        raise TruncatedFile(
            f"element '{getattr(e.element, 'name', '?')}' ends early at row {row}", path=path, offset=offset
        )
    except (ValueError, EOFError) as e:
        raise TruncatedFile(f"unreadable PLY body: {e}", path=path, offset=_header_length(raw))

    if ply.text:
        raise UnsupportedFormat("ASCII PLY is not supported", path=path)
    if ply.byte_order == ">":
        raise UnsupportedFormat("big-endian PLY is not supported", path=path)
    try:
        vertex = ply["vertex"]
    except KeyError:
        raise MissingProperty("vertex", path=path)

    names = {p.name for p in vertex.properties}
    for name in REQUIRED_PROPERTIES:
        if name not in names:
            raise MissingProperty(name, path=path)
    rest_names = sorted(
        (n for n in names if n.startswith("f_rest_")), key=lambda n: int(n.split("_")[-1])
    )
    if len(rest_names) not in ALLOWED_REST_COUNTS:
        raise BadRestCount(len(rest_names), path=path)

    data = vertex.data
    count = len(data)

    def columns(keys):
        return np.stack([np.asarray(data[k], dtype=np.float64) for k in keys], axis=1)

    coefficient_count = len(rest_names) // 3 + 1
    sh = np.zeros((count, coefficient_count, 3))
    sh[:, 0, :] = columns([f"f_dc_{i}" for i in range(3)])
    if rest_names:
        # f_rest IS CHANNEL-MAJOR: ALL R COEFFICIENTS, THEN G, THEN B
        rest = columns(rest_names).reshape(count, 3, coefficient_count - 1)
        sh[:, 1:, :] = np.transpose(rest, (0, 2, 1))

    cloud = GaussianCloud(
        means=columns(["x", "y", "z"]),
        log_scales=columns([f"scale_{i}" for i in range(3)]),
        rotations=columns([f"rot_{i}" for i in range(4)]),
        opacity_logits=np.asarray(data["opacity"], dtype=np.float64),
        sh=sh,
        sh_degree=sh_degree_for_count(coefficient_count),
        role=role,
    )
    logger.info(f"✅ Read {count} Gaussians (SH degree {cloud.sh_degree}) from {path}")
    return cloud


def write_gaussian_ply(path: Union[str, Path], cloud: GaussianCloud) -> None:
    """Write the standard binary little-endian layout (float32 properties)."""
    n = len(cloud)
    rest_count = 3 * (cloud.sh.shape[1] - 1)
    names = (
        ["x", "y", "z", "nx", "ny", "nz"]
        + [f"f_dc_{i}" for i in range(3)]
        + [f"f_rest_{i}" for i in range(rest_count)]
        + ["opacity"]
        + [f"scale_{i}" for i in range(3)]
        + [f"rot_{i}" for i in range(4)]
    )
    rest = np.transpose(cloud.sh[:, 1:, :], (0, 2, 1)).reshape(n, rest_count)
    values = np.concatenate(
        [
            cloud.means,
            np.zeros((n, 3)),
            cloud.sh[:, 0, :],
            rest,
            cloud.opacity_logits[:, None],
            cloud.log_scales,
            cloud.rotations,
        ],
        axis=1,
    )
    records = np.empty(n, dtype=[(name, "<f4") for name in names])
    for i, name in enumerate(names):
        records[name] = values[:, i]
    PlyData([PlyElement.describe(records, "vertex")], text=False, byte_order="<").write(str(path))
    logger.info(f"Wrote {n} Gaussians to {path}")
