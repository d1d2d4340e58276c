# File: tests/test_frosted_param.py
import math

import numpy as np
import pytest

from schemas.errors import BadCellIndex, DegenerateCellCenter, MeshMismatch
from schemas.frosted_schema import FrostedGaussian, FrostedGaussians
from schemas.gaussian_schema import Gaussian3D
from schemas.layer_schema import PrismaticCell
from services.cells_service import build_layer, points_in_cells
from services.frosted_param import (
    adjusted_sh_eval,
    corner_transforms,
    deform_scene,
    log_blend,
    position,
    positions,
    softmax,
    transfer_deformation,
    vertex_local_transform,
)
from services.scene_model import covariance, quaternions_to_matrices, sh_radiance
from services.toy_scene import icosphere

QUARTER_TURN_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def frosted(bary_logits=np.zeros(6), log_scales=np.zeros(3), rotation=(1.0, 0.0, 0.0, 0.0), sh=None, degree=0,
            residual=(1.0, 0.0, 0.0, 0.0), cell_index=0):
    k = (degree + 1) ** 2
    return FrostedGaussian(
        cell_index=cell_index,
        bary_logits=bary_logits,
        log_scales=log_scales,
        rotation=rotation,
        opacity_logit=0.0,
        residual_rotation=residual,
        sh=np.zeros((k, 3)) if sh is None else sh,
        sh_degree=degree,
    )


def moved_cell(cell: PrismaticCell, transform) -> PrismaticCell:
    return PrismaticCell(face_index=cell.face_index, corners=transform(cell.corners), volume=cell.volume)


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, dtype=np.float64) / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * k @ k


@pytest.fixture(scope="module")
def unit_cell(triangle_mesh):
    return build_layer(triangle_mesh, np.full(3, -0.5), np.full(3, 0.5)).cell(0)


@pytest.fixture(scope="module")
def unit_layer(triangle_mesh):
    return build_layer(triangle_mesh, np.full(3, -0.5), np.full(3, 0.5))


# BARYCENTRIC POSITION


def test_softmax_cases():
    np.testing.assert_allclose(softmax(np.zeros(6)), np.full(6, 1.0 / 6.0))
    one_hot = softmax(np.array([50.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    assert one_hot[0] > 1.0 - 1e-12
    logits = np.random.default_rng(0).normal(size=6)
    np.testing.assert_allclose(softmax(logits + 123.4), softmax(logits), atol=1e-12)


def test_one_hot_logits_sit_on_a_corner(unit_layer):
    g = frosted(bary_logits=[50.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(position(g, unit_layer), unit_layer.corners[0, 0], atol=1e-12)


def test_equal_logits_sit_at_the_centroid(unit_layer):
    np.testing.assert_allclose(position(frosted(), unit_layer), unit_layer.corners[0].mean(axis=0), atol=1e-15)


def test_position_is_linear_in_corners(unit_layer):
    g = frosted(bary_logits=np.random.default_rng(1).normal(size=6))
    weights = softmax(g.bary_logits)
    np.testing.assert_allclose(position(g, unit_layer), weights @ unit_layer.corners[0], atol=1e-15)


def test_random_positions_stay_in_the_cell(unit_layer):
    rng = np.random.default_rng(2)
    n = 1000
    batch = FrostedGaussians(
        cell_indices=np.zeros(n, dtype=np.int64),
        bary_logits=rng.normal(scale=3.0, size=(n, 6)),
        log_scales=np.zeros((n, 3)),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacity_logits=np.zeros(n),
        residual_rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        sh=np.zeros((n, 1, 3)),
        sh_degree=0,
    )
    inside = points_in_cells(positions(batch, unit_layer), np.broadcast_to(unit_layer.corners[0], (n, 6, 3)))
    assert inside.all()


def test_bad_cell_index(unit_layer):
    with pytest.raises(BadCellIndex):
        position(frosted(cell_index=5), unit_layer)


# CORNER TRANSFORMS


def test_identity_corner_transform(unit_cell):
    q, _, scale = vertex_local_transform(unit_cell, unit_cell, 0)
    np.testing.assert_allclose(q, [1.0, 0.0, 0.0, 0.0], atol=1e-12)
    assert scale == pytest.approx(1.0)


@pytest.mark.parametrize("corner", range(6))
def test_rotated_cell_gives_the_rotation(unit_cell, corner):
    rotated = moved_cell(unit_cell, lambda c: c @ QUARTER_TURN_Z.T)
    q, _, scale = vertex_local_transform(unit_cell, rotated, corner)
    half = math.pi / 4
    np.testing.assert_allclose(q, [math.cos(half), 0.0, 0.0, math.sin(half)], atol=1e-9)
    assert scale == pytest.approx(1.0)


def test_dilated_cell_gives_the_scale(unit_cell):
    center = unit_cell.center
    dilated = moved_cell(unit_cell, lambda c: center + 2.0 * (c - center))
    q, _, scale = vertex_local_transform(unit_cell, dilated, 3)
    np.testing.assert_allclose(q, [1.0, 0.0, 0.0, 0.0], atol=1e-12)
    assert scale == pytest.approx(2.0)


def test_corner_at_the_center_raises():
    collapsed = np.zeros((1, 6, 3))
    with pytest.raises(DegenerateCellCenter):
        corner_transforms(collapsed, collapsed)


# DEFORMATION TRANSFER


def test_unchanged_cell_keeps_the_gaussian(unit_cell):
    g = frosted(log_scales=[0.1, -0.2, 0.3])
    assert transfer_deformation(g, unit_cell, unit_cell) is g


def test_rigid_motion_rotates_the_covariance(unit_cell, unit_layer):
    rng = np.random.default_rng(3)
    rot = rotation_matrix(rng.normal(size=3), 1.1)
    shift = np.array([0.3, -2.0, 5.0])
    q = rng.normal(size=4)
    g = frosted(
        bary_logits=rng.normal(size=6),
        log_scales=np.log([0.05, 0.1, 0.2]),
        rotation=q / np.linalg.norm(q),
    )
    after = moved_cell(unit_cell, lambda c: c @ rot.T + shift)
    moved = transfer_deformation(g, unit_cell, after)

    before_cov = covariance(Gaussian3D(mean=np.zeros(3), log_scales=g.log_scales, rotation=g.rotation,
                                       opacity_logit=0.0, sh=g.sh, sh_degree=0))
    after_cov = covariance(Gaussian3D(mean=np.zeros(3), log_scales=moved.log_scales, rotation=moved.rotation,
                                      opacity_logit=0.0, sh=moved.sh, sh_degree=0))
    expected = rot @ before_cov @ rot.T
    assert np.linalg.norm(after_cov - expected) <= 1e-5 * np.linalg.norm(expected)
    np.testing.assert_allclose(moved.log_scales, g.log_scales, atol=1e-6)
    np.testing.assert_allclose(quaternions_to_matrices(moved.residual_rotation[None])[0], rot, atol=1e-6)

    moved_layer = unit_layer.model_copy(update={"corners": after.corners[None]})
    np.testing.assert_allclose(position(moved, moved_layer), rot @ position(g, unit_layer) + shift, atol=1e-9)


def test_uniform_scaling_scales_the_gaussian(unit_cell):
    center = unit_cell.center
    g = frosted(bary_logits=np.random.default_rng(4).normal(size=6), log_scales=np.log([0.1, 0.2, 0.3]))
    scaled = transfer_deformation(g, unit_cell, moved_cell(unit_cell, lambda c: center + 1.5 * (c - center)))
    np.testing.assert_allclose(scaled.log_scales, g.log_scales + math.log(1.5), atol=1e-9)
    np.testing.assert_allclose(
        quaternions_to_matrices(scaled.rotation[None]), quaternions_to_matrices(g.rotation[None]), atol=1e-9
    )


def test_deform_scene_with_identity_mesh(toy_scene):
    same = deform_scene(toy_scene, toy_scene.mesh)
    np.testing.assert_array_equal(same.gaussians.log_scales, toy_scene.gaussians.log_scales)
    np.testing.assert_array_equal(same.gaussians.rotations, toy_scene.gaussians.rotations)


def test_deform_scene_follows_a_rigid_rotation(toy_scene):
    rot = rotation_matrix([0.0, 0.0, 1.0], 0.7)
    rotated = deform_scene(toy_scene, toy_scene.mesh.with_vertices(toy_scene.mesh.vertices @ rot.T))
    np.testing.assert_allclose(
        positions(rotated.gaussians, rotated.layer),
        positions(toy_scene.gaussians, toy_scene.layer) @ rot.T,
        atol=1e-9,
    )
    np.testing.assert_allclose(rotated.gaussians.log_scales, toy_scene.gaussians.log_scales, atol=1e-6)


def test_deform_scene_rejects_another_mesh(toy_scene):
    with pytest.raises(MeshMismatch) as info:
        deform_scene(toy_scene, icosphere(2))
    assert str(toy_scene.mesh.vertex_count) in str(info.value)
    assert str(icosphere(2).vertex_count) in str(info.value)


def rotation_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle in radians between rows of unit quaternions."""
    return 2.0 * np.arccos(np.clip(np.abs(np.sum(a * b, axis=-1)), 0.0, 1.0))


def radial_bulge(vertices: np.ndarray) -> np.ndarray:
    angle = np.arctan2(vertices[:, 1], vertices[:, 0])
    factor = 1.0 + 0.22 * np.sin(3.0 * angle) * np.cos(2.0 * vertices[:, 2])
    return vertices * factor[:, None]


@pytest.mark.parametrize(
    "warp",
    [
        lambda v: 1.5 * v,
        lambda v: v * np.array([1.5, 1.0, 0.75]),
        radial_bulge,
    ],
    ids=["uniform", "anisotropic", "radial"],
)
def test_deforming_back_restores_the_gaussians(toy_scene, warp):
    warped = deform_scene(toy_scene, toy_scene.mesh.with_vertices(warp(toy_scene.mesh.vertices)))
    assert np.max(np.abs(warped.gaussians.log_scales - toy_scene.gaussians.log_scales)) > 1e-3
    restored = deform_scene(warped, toy_scene.mesh)

    np.testing.assert_array_equal(restored.layer.corners, toy_scene.layer.corners)
    scale_ratio = np.exp(restored.gaussians.log_scales - toy_scene.gaussians.log_scales)
    assert np.max(np.abs(scale_ratio - 1.0)) <= 1e-4
    assert np.max(rotation_gap(restored.gaussians.rotations, toy_scene.gaussians.rotations)) <= 1e-3
    assert np.max(
        rotation_gap(restored.gaussians.residual_rotations, toy_scene.gaussians.residual_rotations)
    ) <= 1e-3
    np.testing.assert_allclose(
        positions(restored.gaussians, restored.layer), positions(toy_scene.gaussians, toy_scene.layer), atol=1e-12
    )


def test_log_blend_inverts_under_swapped_cells(unit_cell):
    rng = np.random.default_rng(8)
    before = unit_cell.corners[None]
    after = before + rng.normal(scale=0.05, size=before.shape)
    weights = softmax(rng.normal(size=(4, 6)))
    forward = corner_transforms(before, after)
    backward = corner_transforms(after, before)
    rot_f, scale_f = log_blend(weights, np.repeat(forward[0], 4, axis=0), np.repeat(forward[2], 4, axis=0))
    rot_b, scale_b = log_blend(weights, np.repeat(backward[0], 4, axis=0), np.repeat(backward[2], 4, axis=0))
    np.testing.assert_allclose(rot_b @ rot_f, np.broadcast_to(np.eye(3), (4, 3, 3)), atol=1e-12)
    np.testing.assert_allclose(scale_f + scale_b, 0.0, atol=1e-12)


def test_linear_blend_matches_rigid_motion(unit_cell):
    rot = rotation_matrix([0.2, -1.0, 0.4], 0.8)
    g = frosted(bary_logits=np.random.default_rng(9).normal(size=6), log_scales=np.log([0.05, 0.1, 0.2]))
    after = moved_cell(unit_cell, lambda c: c @ rot.T)
    linear = transfer_deformation(g, unit_cell, after, blend="linear")
    logged = transfer_deformation(g, unit_cell, after, blend="log")
    np.testing.assert_allclose(linear.log_scales, g.log_scales, atol=1e-9)
    assert rotation_gap(linear.rotation, logged.rotation) <= 1e-9


def test_unknown_blend_is_rejected(unit_cell):
    with pytest.raises(ValueError):
        transfer_deformation(frosted(), unit_cell, moved_cell(unit_cell, lambda c: 2.0 * c), blend="mean")


# VIEW-DEPENDENT COLOR


def test_identity_residual_matches_plain_sh():
    sh = np.random.default_rng(5).normal(scale=0.3, size=(16, 3))
    g = frosted(sh=sh, degree=3)
    plain = Gaussian3D(mean=np.zeros(3), log_scales=np.zeros(3), rotation=[1, 0, 0, 0],
                       opacity_logit=0.0, sh=sh, sh_degree=3)
    view = np.array([0.3, -0.4, 0.8])
    np.testing.assert_array_equal(adjusted_sh_eval(g, view), sh_radiance(plain, view))


def test_degree_zero_ignores_the_residual():
    sh = np.array([[0.4, 0.1, -0.3]])
    base = adjusted_sh_eval(frosted(sh=sh), [1.0, 2.0, 3.0])
    q = np.array([0.3, 0.5, -0.2, 0.7])
    turned = adjusted_sh_eval(frosted(sh=sh, residual=q / np.linalg.norm(q)), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(turned, base, atol=1e-15)


def test_degree_one_residual_rotates_the_lobe():
    rng = np.random.default_rng(6)
    sh = np.zeros((4, 3))
    sh[0] = 2.0
    sh[1:] = rng.normal(scale=0.3, size=(3, 3))
    rot = rotation_matrix([1.0, 2.0, -0.5], 0.9)
    q = np.array([math.cos(0.45), *(math.sin(0.45) * np.array([1.0, 2.0, -0.5]) / np.linalg.norm([1.0, 2.0, -0.5]))])

    # DEGREE-ONE TERM IS C1 * dot(d, w) WITH w = (-c3, -c1, c2) PER CHANNEL
    w = np.stack([-sh[3], -sh[1], sh[2]])
    rotated_w = rot @ w
    turned_sh = sh.copy()
    turned_sh[1], turned_sh[2], turned_sh[3] = -rotated_w[1], rotated_w[2], -rotated_w[0]

    view = np.array([0.2, -0.7, 0.4])
    residual = adjusted_sh_eval(frosted(sh=sh, degree=1, residual=q), view)
    reference = sh_radiance(
        Gaussian3D(mean=np.zeros(3), log_scales=np.zeros(3), rotation=[1, 0, 0, 0],
                   opacity_logit=0.0, sh=turned_sh, sh_degree=1),
        view,
    )
    np.testing.assert_allclose(residual, reference, atol=1e-12)
