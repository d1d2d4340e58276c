# File: services/cells_service.py
import logging
from typing import Optional, Sequence, Union

import numpy as np

from schemas.errors import DegenerateCell, ShiftLengthMismatch
from schemas.layer_schema import (
    ContractionParams,
    FrostingLayer,
    PrismaticCell,
    VertexShiftRecord,
    shifts_from_records,
)
from schemas.mesh_schema import TriMesh

logger = logging.getLogger(__name__)

# CORNER SLOTS IN A CELL: 0..2 OUTER, 3..5 INNER
O0, O1, O2, I0, I1, I2 = range(6)
# FIXED SPLIT OF A PRISM INTO THREE TETRAHEDRA
CELL_TETRAHEDRA = np.array(
    [
        [I0, I1, I2, O2],
        [I0, I1, O1, O2],
        [I0, O0, O1, O2],
    ]
)
# BARYCENTRIC SLOTS OF EACH TETRAHEDRON THAT FACE ANOTHER TETRAHEDRON (NOT THE CELL BOUNDARY)
INTERNAL_FACES = [(2,), (1, 2), (1,)]
BARY_TOL = 1e-9
DEGENERATE_VOLUME = 1e-12


def cell_corners(mesh: TriMesh, delta_in: np.ndarray, delta_out: np.ndarray) -> np.ndarray:
    """(F, 6, 3) corners from per-vertex shifts along the vertex normals."""
    outer = mesh.vertices + delta_out[:, None] * mesh.normals
    inner = mesh.vertices + delta_in[:, None] * mesh.normals
    return np.concatenate([outer[mesh.faces], inner[mesh.faces]], axis=1)


def _tet_volumes(corners: np.ndarray) -> np.ndarray:
    """(..., 6, 3) -> (..., 3) unsigned volumes of the three tetrahedra."""
    tets = corners[..., CELL_TETRAHEDRA, :]
    edges = tets[..., 1:, :] - tets[..., :1, :]
    return np.abs(np.linalg.det(edges)) / 6.0


def cell_volumes(corners: np.ndarray) -> np.ndarray:
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape[0] == 0:
        return np.zeros(0)
    return _tet_volumes(corners).sum(axis=-1)


def cell_volume(cell: Union[PrismaticCell, np.ndarray]) -> float:
    corners = cell.corners if isinstance(cell, PrismaticCell) else np.asarray(cell, dtype=np.float64)
    return float(cell_volumes(corners[None])[0])


def build_layer(mesh: TriMesh, delta_in: np.ndarray, delta_out: np.ndarray) -> FrostingLayer:
    delta_in = np.asarray(delta_in, dtype=np.float64)
    delta_out = np.asarray(delta_out, dtype=np.float64)
    corners = cell_corners(mesh, delta_in, delta_out)
    return FrostingLayer(
        mesh=mesh,
        delta_in=delta_in,
        delta_out=delta_out,
        corners=corners,
        volumes=cell_volumes(corners),
    )


def build_cells(mesh: TriMesh, shifts: Sequence[VertexShiftRecord]) -> FrostingLayer:
    if len(shifts) != mesh.vertex_count:
        raise ShiftLengthMismatch(mesh.vertex_count, len(shifts))
    delta_in, delta_out = shifts_from_records(list(shifts))
    layer = build_layer(mesh, delta_in, delta_out)
    logger.info(
        f"✅ Built {layer.cell_count} cells, total volume {layer.total_volume:.6g}"
    )
    return layer


# POINT-IN-CELL


def _corner_scale(corners: np.ndarray) -> np.ndarray:
    extent = corners.max(axis=-2) - corners.min(axis=-2)
    return np.linalg.norm(extent, axis=-1)


def degenerate_mask(corners: np.ndarray, volumes: Optional[np.ndarray] = None) -> np.ndarray:
    """Cells whose volume is negligible relative to their own extent."""
    corners = np.asarray(corners, dtype=np.float64)
    if volumes is None:
        volumes = cell_volumes(corners)
    scale = _corner_scale(corners)
    return volumes <= DEGENERATE_VOLUME * np.maximum(scale, 1e-300) ** 3


def points_in_cells(points: np.ndarray, corners: np.ndarray, strict: bool = False) -> np.ndarray:
    """Pairwise test: is points[k] inside the cell with corners[k]?

    Containment is tested against the three tetrahedra of the fixed split. In strict mode
    a point on the cell boundary is outside; points on a face shared by two tetrahedra still
    count as inside.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    corners = np.asarray(corners, dtype=np.float64).reshape(-1, 6, 3)
    result = np.zeros(points.shape[0], dtype=bool)
    if not len(points):
        return result
    tets = corners[:, CELL_TETRAHEDRA, :]
    base = tets[:, :, 0, :]
    edges = np.swapaxes(tets[:, :, 1:, :] - base[:, :, None, :], -1, -2)
    dets = np.linalg.det(edges)
    scale = _corner_scale(corners)
    usable = np.abs(dets) > DEGENERATE_VOLUME * np.maximum(scale, 1e-300)[:, None] ** 3
    safe = np.where(usable[..., None, None], edges, np.eye(3))
    rhs = points[:, None, :] - base
    lam = np.linalg.solve(safe, rhs[..., None])[..., 0]
    bary = np.concatenate([1.0 - lam.sum(axis=-1, keepdims=True), lam], axis=-1)
    inside = usable & np.all(bary >= -BARY_TOL, axis=-1)
    if strict:
        for t, internal in enumerate(INTERNAL_FACES):
            near_zero = bary[:, t, :] <= BARY_TOL
            boundary_slots = np.ones(4, dtype=bool)
            boundary_slots[list(internal)] = False
            on_boundary = np.any(near_zero & boundary_slots, axis=-1)
            inside[:, t] &= ~on_boundary
    return inside.any(axis=1)


def point_in_cell(p, cell: PrismaticCell, strict: bool = False) -> bool:
    if degenerate_mask(cell.corners[None], np.array([cell.volume]))[0]:
        raise DegenerateCell(f"cell {cell.face_index} has zero volume")
    return bool(points_in_cells(np.asarray(p)[None], cell.corners[None], strict=strict)[0])


# CONTRACTION


def contract_points(x: np.ndarray, params: ContractionParams) -> np.ndarray:
    """Identity within radius l of the center, then squashed into a 2l ball."""
    x = np.asarray(x, dtype=np.float64)
    offset = x - params.center
    dist = np.linalg.norm(offset, axis=-1, keepdims=True)
    l = params.radius
    far = dist > l
    safe = np.where(far, dist, 1.0)
    squashed = params.center + (2.0 - l / safe) * (l / safe) * offset
    return np.where(far, squashed, x)


def contract_point(x, params: ContractionParams) -> np.ndarray:
    return contract_points(np.asarray(x, dtype=np.float64)[None], params)[0]


def contracted_volumes(corners: np.ndarray, params: ContractionParams) -> np.ndarray:
    corners = np.asarray(corners, dtype=np.float64)
    if corners.shape[0] == 0:
        return np.zeros(0)
    return cell_volumes(contract_points(corners, params))


def contracted_volume(cell: PrismaticCell, params: ContractionParams) -> float:
    return float(contracted_volumes(cell.corners[None], params)[0])


def default_contraction(mesh: TriMesh) -> ContractionParams:
    """Centered on the vertex centroid with radius half the bounding-box diagonal."""
    lo, hi = mesh.bounding_box()
    radius = 0.5 * float(np.linalg.norm(hi - lo))
    return ContractionParams(center=mesh.vertices.mean(axis=0), radius=max(radius, 1e-9))


def contraction_from_cameras(camera_centers: np.ndarray) -> ContractionParams:
    """Center of the camera bounding box, radius half its diagonal."""
    centers = np.asarray(camera_centers, dtype=np.float64).reshape(-1, 3)
    lo, hi = centers.min(axis=0), centers.max(axis=0)
    radius = 0.5 * float(np.linalg.norm(hi - lo))
    return ContractionParams(center=0.5 * (lo + hi), radius=max(radius, 1e-9))


def cell_bounds(corners: np.ndarray):
    return corners.min(axis=1), corners.max(axis=1)
