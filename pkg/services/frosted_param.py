# File: services/frosted_param.py
import logging
from typing import Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from schemas.errors import BadCellIndex, DegenerateAxes, DegenerateCellCenter, MeshMismatch
from schemas.frosted_schema import FrostedGaussian, FrostedGaussians
from schemas.layer_schema import FrostingLayer, PrismaticCell
from schemas.mesh_schema import TriMesh
from schemas.scene_schema import FrostingScene
from services.cells_service import build_layer
from services.scene_model import (
    eval_sh,
    matrices_to_quaternions,
    quaternion_multiply,
    quaternions_to_matrices,
    sh_to_rgb,
    unit_directions,
)

logger = logging.getLogger(__name__)

PARALLEL_EPS = 1e-8
CENTER_EPS = 1e-12
# EACH CORNER'S SECONDARY REFERENCE IS THE NEXT CORNER ON THE SAME TRIANGLE
NEXT_CORNER = np.array([1, 2, 0, 4, 5, 3])
BLENDS = ("log", "linear")


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def barycentrics(g: FrostedGaussian) -> np.ndarray:
    return softmax(g.bary_logits)


def _check_cells(cell_indices: np.ndarray, layer: FrostingLayer) -> None:
    if len(cell_indices):
        bad = cell_indices[(cell_indices < 0) | (cell_indices >= layer.cell_count)]
        if len(bad):
            raise BadCellIndex(int(bad[0]), layer.cell_count)


def positions(gaussians: FrostedGaussians, layer: FrostingLayer) -> np.ndarray:
    """(N, 3) world positions: barycentric mix of each Gaussian's cell corners."""
    _check_cells(gaussians.cell_indices, layer)
    if not len(gaussians):
        return np.zeros((0, 3))
    weights = softmax(gaussians.bary_logits)
    return np.einsum("nk,nkj->nj", weights, layer.corners[gaussians.cell_indices])


def position(g: FrostedGaussian, layer: FrostingLayer) -> np.ndarray:
    _check_cells(np.array([g.cell_index]), layer)
    return barycentrics(g) @ layer.corners[g.cell_index]


# PER-CORNER LOCAL TRANSFORMS


def _axis_angle_matrices(axes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues formula for unit axes (..., 3) and angles (...)."""
    k = axes
    zero = np.zeros_like(angles)
    kx = np.stack(
        [
            np.stack([zero, -k[..., 2], k[..., 1]], -1),
            np.stack([k[..., 2], zero, -k[..., 0]], -1),
            np.stack([-k[..., 1], k[..., 0], zero], -1),
        ],
        -2,
    )
    sin = np.sin(angles)[..., None, None]
    cos = np.cos(angles)[..., None, None]
    eye = np.broadcast_to(np.eye(3), kx.shape)
    return eye + sin * kx + (1.0 - cos) * (kx @ kx)


def _any_perpendicular(v: np.ndarray) -> np.ndarray:
    helper = np.where(
        (np.abs(v[..., 0]) < 0.9)[..., None], np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    )
    perp = np.cross(v, helper)
    return perp / np.linalg.norm(perp, axis=-1, keepdims=True)


def corner_transforms(before: np.ndarray, after: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rotation, swing axis and scale of every corner of every cell.

    `before`/`after` are (F, 6, 3) corners. Each corner's rotation turns its corner-to-center
    direction onto the deformed one (swing) and then twists about the new direction so the
    edge to the next corner lines up as well; rigid motions come out exactly. The scale is the
    ratio of corner-to-center lengths.
    """
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    a = before.mean(axis=1, keepdims=True) - before
    a_new = after.mean(axis=1, keepdims=True) - after
    len_a = np.linalg.norm(a, axis=-1)
    len_new = np.linalg.norm(a_new, axis=-1)
    if np.any(len_a < CENTER_EPS) or np.any(len_new < CENTER_EPS):
        raise DegenerateCellCenter("a cell center coincides with one of its corners")
    u = a / len_a[..., None]
    u_new = a_new / len_new[..., None]

    # SWING
    cross = np.cross(u, u_new)
    sin = np.linalg.norm(cross, axis=-1)
    cos = np.sum(u * u_new, axis=-1)
    parallel = sin < PARALLEL_EPS
    axis = np.where(parallel[..., None], u_new, cross / np.where(parallel, 1.0, sin)[..., None])
    angle = np.where(parallel, np.where(cos < 0.0, np.pi, 0.0), np.arctan2(sin, cos))
    flip_axis = _any_perpendicular(u)
    axis_for_rotation = np.where((parallel & (cos < 0.0))[..., None], flip_axis, axis)
    swing = _axis_angle_matrices(axis_for_rotation, angle)

    # TWIST ABOUT THE NEW DIRECTION
    edge = before[:, NEXT_CORNER] - before
    edge_new = after[:, NEXT_CORNER] - after
    edge_perp = edge - np.sum(edge * u, -1, keepdims=True) * u
    swung = np.einsum("fkij,fkj->fki", swing, edge_perp)
    target = edge_new - np.sum(edge_new * u_new, -1, keepdims=True) * u_new
    norms = np.linalg.norm(swung, axis=-1) * np.linalg.norm(target, axis=-1)
    usable = norms > CENTER_EPS
    twist_angle = np.where(
        usable,
        np.arctan2(np.sum(np.cross(swung, target) * u_new, -1), np.sum(swung * target, -1)),
        0.0,
    )
    twist = _axis_angle_matrices(u_new, twist_angle)
    rotations = twist @ swing
    return rotations, axis, len_new / len_a


def vertex_local_transform(
    cell_before: PrismaticCell, cell_after: PrismaticCell, i: int
) -> Tuple[np.ndarray, np.ndarray, float]:
    """(quaternion, swing axis, scale) for corner i of one cell."""
    rotations, axes, scales = corner_transforms(cell_before.corners[None], cell_after.corners[None])
    return matrices_to_quaternions(rotations[0, i]), axes[0, i], float(scales[0, i])


# DEFORMATION TRANSFER


def _orthonormalize(columns: np.ndarray):
    """Gram-Schmidt on (N, 3, 3) column sets, longest column first, kept right-handed."""
    n = columns.shape[0]
    lengths = np.linalg.norm(columns, axis=1)
    order = np.argsort(-lengths, axis=1, kind="stable")
    rows = np.arange(n)[:, None]
    ordered = columns[rows[:, None], np.arange(3)[None, :, None], order[:, None, :]]
    basis = np.zeros_like(ordered)
    degenerate = np.zeros(n, dtype=bool)
    for j in range(3):
        v = ordered[:, :, j].copy()
        for p in range(j):
            q = basis[:, :, p]
            v -= np.sum(v * q, axis=1, keepdims=True) * q
        norm = np.linalg.norm(v, axis=1)
        reference = np.maximum(lengths.max(axis=1), 1e-300)
        degenerate |= norm <= 1e-9 * reference
        basis[:, :, j] = v / np.where(norm > 0.0, norm, 1.0)[:, None]
    result = np.empty_like(basis)
    result[rows[:, None], np.arange(3)[None, :, None], order[:, None, :]] = basis
    # RIGHT-HANDED: FLIP THE SHORTEST AXIS IF NEEDED
    flip = np.flatnonzero(np.linalg.det(result) < 0.0)
    result[flip, :, order[flip, 2]] *= -1.0
    return result, lengths, degenerate


def log_blend(
    weights: np.ndarray, corner_rot: np.ndarray, corner_scale: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Weighted mean of corner rotations (as rotation vectors) and of log scales.

    Swapping `before` and `after` negates every corner log, so the blended transform of the
    reverse deformation is the exact inverse of the forward one.
    """
    n = len(weights)
    rotvecs = Rotation.from_matrix(corner_rot.reshape(-1, 3, 3)).as_rotvec().reshape(n, 6, 3)
    mean_rot = Rotation.from_rotvec(np.einsum("nk,nkj->nj", weights, rotvecs)).as_matrix()
    log_scale = np.sum(weights * np.log(corner_scale), axis=1)
    return mean_rot.reshape(n, 3, 3), log_scale


def transfer_batch(
    gaussians: FrostedGaussians,
    before: np.ndarray,
    after: np.ndarray,
    strict: bool = False,
    blend: str = "log",
) -> FrostedGaussians:
    """Carry every Gaussian through the change of its cell from `before` to `after` corners.

    `blend="log"` rotates and scales each Gaussian by the barycentric log-space mean of its
    cell's corner transforms. `blend="linear"` applies every corner transform to the scaled
    axes, averages the results and re-orthonormalizes; there, Gaussians whose axes collapse
    keep their rotation and are scaled by the mean corner scale, or raise DegenerateAxes
    with `strict`.
    """
    if blend not in BLENDS:
        raise ValueError(f"blend must be one of {BLENDS}, got {blend!r}")
    if not len(gaussians):
        return gaussians
    cells = gaussians.cell_indices
    changed_cells = np.any(before != after, axis=(1, 2))
    moving = np.flatnonzero(changed_cells[cells])
    if not len(moving):
        return gaussians

    used = np.unique(cells[moving])
    rot_used, _, scale_used = corner_transforms(before[used], after[used])
    lookup = np.searchsorted(used, cells[moving])
    corner_rot = rot_used[lookup]
    corner_scale = scale_used[lookup]

    weights = softmax(gaussians.bary_logits[moving])
    old_rot = quaternions_to_matrices(gaussians.rotations[moving])
    if blend == "log":
        mean_rot, log_scale = log_blend(weights, corner_rot, corner_scale)
        new_rot = mean_rot @ old_rot
        lengths = np.exp(gaussians.log_scales[moving] + log_scale[:, None])
        degenerate = np.zeros(len(moving), dtype=bool)
    else:
        mixed = np.einsum("nk,nk,nkij->nij", weights, corner_scale, corner_rot)
        old_scales = np.exp(gaussians.log_scales[moving])
        axes = mixed @ (old_rot * old_scales[:, None, :])
        new_rot, lengths, degenerate = _orthonormalize(axes)

    log_scales = gaussians.log_scales.copy()
    rotations = gaussians.rotations.copy()
    residuals = gaussians.residual_rotations.copy()

    good = ~degenerate
    idx = moving[good]
    log_scales[idx] = np.log(lengths[good])
    rotations[idx] = matrices_to_quaternions(new_rot[good])
    net = new_rot[good] @ np.swapaxes(old_rot[good], 1, 2)
    residuals[idx] = quaternion_multiply(matrices_to_quaternions(net), residuals[idx])
    residuals[idx] /= np.linalg.norm(residuals[idx], axis=1, keepdims=True)

    if degenerate.any():
        bad = moving[degenerate]
        if strict:
            raise DegenerateAxes(len(bad))
        logger.warning(
            f"⚠️ {len(bad)} Gaussians lost an axis under deformation; keeping their rotation"
        )
        # FALLBACK: KEEP ROTATION, SCALE BY THE MEAN CORNER SCALE
        log_scales[bad] = gaussians.log_scales[bad] + np.log(corner_scale[degenerate].mean(axis=1))[:, None]

    return gaussians.replace(log_scales=log_scales, rotations=rotations, residual_rotations=residuals)


def transfer_deformation(
    g: FrostedGaussian, cell_before: PrismaticCell, cell_after: PrismaticCell, blend: str = "log"
) -> FrostedGaussian:
    if np.array_equal(cell_before.corners, cell_after.corners):
        return g
    batch = FrostedGaussians.from_list([g.model_copy(update={"cell_index": 0})])
    moved = transfer_batch(batch, cell_before.corners[None], cell_after.corners[None], blend=blend)[0]
    return moved.model_copy(update={"cell_index": g.cell_index})


def deform_scene(
    scene: FrostingScene, deformed_mesh: TriMesh, blend: str = "log", strict: bool = False
) -> FrostingScene:
    """Rebuild the layer on a deformed mesh with the same shifts and carry every Gaussian along."""
    old_mesh = scene.mesh
    if deformed_mesh.vertex_count != old_mesh.vertex_count:
        raise MeshMismatch(old_mesh.vertex_count, deformed_mesh.vertex_count)
    if deformed_mesh.faces.shape != old_mesh.faces.shape or not np.array_equal(
        deformed_mesh.faces, old_mesh.faces
    ):
        raise MeshMismatch(
            old_mesh.vertex_count, deformed_mesh.vertex_count, "face connectivity differs"
        )
    layer = build_layer(deformed_mesh, scene.layer.delta_in, scene.layer.delta_out)
    gaussians = transfer_batch(scene.gaussians, scene.layer.corners, layer.corners, strict=strict, blend=blend)
    logger.info(f"✅ Transferred {len(gaussians)} Gaussians onto the deformed mesh")
    return FrostingScene(
        mesh=deformed_mesh,
        layer=layer,
        gaussians=gaussians,
        background=scene.background,
        contraction=scene.contraction,
        seed=scene.seed,
    )


# VIEW-DEPENDENT COLOR


def residual_view_dirs(view_dirs: np.ndarray, residuals: np.ndarray) -> np.ndarray:
    """Rotate unit view directions by the inverse residual rotation; identity rows untouched."""
    identity = np.all(residuals == np.array([1.0, 0.0, 0.0, 0.0]), axis=-1)
    if identity.all():
        return view_dirs
    mats = quaternions_to_matrices(residuals)
    rotated = np.einsum("nji,nj->ni", mats, view_dirs)
    return np.where(identity[:, None], view_dirs, rotated)


def adjusted_sh_eval(g: FrostedGaussian, view_dir) -> np.ndarray:
    d = unit_directions(np.asarray(view_dir, dtype=np.float64)[None])
    d = residual_view_dirs(d, g.residual_rotation[None])[0]
    return sh_to_rgb(eval_sh(g.sh_degree, g.sh, d))


def frosted_colors(gaussians: FrostedGaussians, means: np.ndarray, camera_center: np.ndarray) -> np.ndarray:
    """(N, 3) colors seen from `camera_center`."""
    if not len(gaussians):
        return np.zeros((0, 3))
    dirs = unit_directions(means - camera_center)
    dirs = residual_view_dirs(dirs, gaussians.residual_rotations)
    return sh_to_rgb(eval_sh(gaussians.sh_degree, gaussians.sh, dirs))
