# File: integrations/obj_io.py
import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from schemas.errors import BadIndex, TruncatedFile
from schemas.mesh_schema import TriMesh

logger = logging.getLogger(__name__)

# RECORDS WE DON'T NEED BUT ACCEPT
IGNORED_RECORDS = {"vn", "vt", "vp", "o", "g", "s", "mtllib", "usemtl", "l"}


def _vertex_index(token: str, vertex_count: int, line_no: int, path: str) -> int:
    head = token.split("/")[0]
    try:
        index = int(head)
    except ValueError:
        raise TruncatedFile(f"bad face index '{token}'", path=path, line=line_no)
    # 1-BASED, NEGATIVE COUNTS BACK FROM THE LAST VERTEX READ SO FAR
    resolved = index - 1 if index > 0 else vertex_count + index
    if index == 0 or not 0 <= resolved < vertex_count:
        raise BadIndex(f"face index {index} out of range (1..{vertex_count})", path=path, line=line_no)
    return resolved


def read_obj(path: Union[str, Path]) -> TriMesh:
    """Read vertices and faces; polygons are fan-triangulated."""
    path = str(path)
    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            kind, args = parts[0], parts[1:]
            if kind == "v":
                if len(args) < 3:
                    raise TruncatedFile("vertex needs 3 coordinates", path=path, line=line_no)
                try:
                    vertices.append([float(a) for a in args[:3]])
                except ValueError:
                    raise TruncatedFile(f"bad vertex '{line.strip()}'", path=path, line=line_no)
            elif kind == "f":
                if len(args) < 3:
                    raise TruncatedFile("face needs at least 3 vertices", path=path, line=line_no)
                polygon = [_vertex_index(a, len(vertices), line_no, path) for a in args]
                for k in range(1, len(polygon) - 1):
                    faces.append([polygon[0], polygon[k], polygon[k + 1]])
            elif kind not in IGNORED_RECORDS:
                logger.debug(f"Skipping OBJ record '{kind}' on line {line_no}")

    mesh = TriMesh(
        vertices=np.array(vertices, dtype=np.float64).reshape(-1, 3),
        faces=np.array(faces, dtype=np.int64).reshape(-1, 3),
    )
    logger.info(f"✅ Read mesh with {mesh.vertex_count} vertices, {mesh.face_count} faces from {path}")
    return mesh


def write_obj(path: Union[str, Path], mesh: TriMesh) -> None:
    """Shortest round-trip float formatting, so reading back gives identical vertices."""
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
