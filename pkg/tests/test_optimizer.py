# File: tests/test_optimizer.py
import numpy as np
import pytest
import torch

from schemas.config_schema import OptimizerConfig
from schemas.frosted_schema import FrostedGaussians
from schemas.mesh_schema import TriMesh
from schemas.scene_schema import FrostingScene, Image
from services.cells_service import build_layer
from services.differentiable_renderer import fixed_tensors, parameter_tensors, render_tensors
from services.metrics import psnr
from services.optimizer_service import gradient_check, loss_and_gradients, optimize
from services.renderer import render
from services.toy_scene import look_at_camera, orbit_cameras

FROZEN = dict(lr_bary_logits=0.0, lr_log_scales=0.0, lr_rotations=0.0, lr_opacity_logits=0.0, lr_sh=0.0)
GROUPS = ("bary_logits", "log_scales", "rotations", "opacity_logits", "sh")


def self_render(scene, cam) -> Image:
    params = parameter_tensors(scene.gaussians, requires_grad=False)
    pred = render_tensors(params, fixed_tensors(scene), cam, scene.sh_degree)
    return Image(pixels=pred.detach().numpy())


@pytest.fixture(scope="module")
def random_target(front_camera):
    rng = np.random.default_rng(11)
    return Image(pixels=rng.uniform(size=(front_camera.height, front_camera.width, 3)))


def test_zero_iterations_is_a_no_op(tiny_scene, front_camera, random_target):
    scene, result = optimize(tiny_scene, [(front_camera, random_target)], OptimizerConfig(iterations=0))
    assert scene is tiny_scene
    assert result.losses == []


def test_zero_learning_rates_keep_parameters(tiny_scene, front_camera, random_target):
    cfg = OptimizerConfig(iterations=3, **FROZEN)
    scene, result = optimize(tiny_scene, [(front_camera, random_target)], cfg, threads=1)
    assert len(result.losses) == 3
    for name in GROUPS:
        np.testing.assert_array_equal(getattr(scene.gaussians, name), getattr(tiny_scene.gaussians, name))


def test_cells_and_count_never_change(tiny_scene, front_camera, random_target):
    scene, _ = optimize(tiny_scene, [(front_camera, random_target)], OptimizerConfig(iterations=5), threads=1)
    assert len(scene.gaussians) == len(tiny_scene.gaussians)
    np.testing.assert_array_equal(scene.gaussians.cell_indices, tiny_scene.gaussians.cell_indices)
    np.testing.assert_array_equal(scene.layer.corners, tiny_scene.layer.corners)


def test_perfect_fit_has_zero_loss_and_gradient(tiny_scene, front_camera):
    loss, grads = loss_and_gradients(tiny_scene, front_camera, self_render(tiny_scene, front_camera))
    assert loss == pytest.approx(0.0, abs=1e-10)
    for name, grad in grads.as_dict().items():
        assert np.max(np.abs(grad)) < 1e-8, name


def test_gradients_agree_with_finite_differences(tiny_scene, front_camera, random_target):
    report = gradient_check(tiny_scene, front_camera, random_target, samples_per_group=6)
    assert set(report.groups) == set(GROUPS)
    assert report.groups["sh"].median_relative_error < 1e-5
    assert report.groups["opacity_logits"].median_relative_error < 1e-4
    for check in report.groups.values():
        assert check.checked > 0


def test_optimization_is_deterministic(tiny_scene, front_camera, random_target):
    cfg = OptimizerConfig(iterations=4, seed=3)
    dataset = [(front_camera, random_target)]
    first, a = optimize(tiny_scene, dataset, cfg, threads=1)
    second, b = optimize(tiny_scene, dataset, cfg, threads=1)
    assert a.losses == b.losses
    np.testing.assert_array_equal(first.gaussians.sh, second.gaussians.sh)


def test_state_counts_steps_and_resumes(tiny_scene, front_camera, random_target):
    dataset = [(front_camera, random_target)]
    scene, first = optimize(tiny_scene, dataset, OptimizerConfig(iterations=2), threads=1)
    assert first.state.step == 2
    assert set(first.state.exp_avg) == set(GROUPS)
    _, second = optimize(scene, dataset, OptimizerConfig(iterations=3), state=first.state, threads=1)
    assert second.state.step == 5


def test_loss_decreases_on_a_fixed_target(tiny_scene, front_camera, random_target):
    _, result = optimize(tiny_scene, [(front_camera, random_target)], OptimizerConfig(iterations=60), threads=1)
    assert np.mean(result.losses[-5:]) < result.losses[0]


@pytest.mark.slow
def test_colors_are_recovered_from_views(toy_scene):
    cameras = orbit_cameras(20, width=64, height=64)
    dataset = [(cam, render(toy_scene, cam, threads=1)) for cam in cameras]
    blank = toy_scene.with_gaussians(toy_scene.gaussians.replace(sh=np.zeros_like(toy_scene.gaussians.sh)))
    before = np.mean([psnr(render(blank, cam), gt) for cam, gt in dataset])

    torch.manual_seed(0)
    cfg = OptimizerConfig(iterations=2000, lr_sh=0.01)
    fitted, _ = optimize(blank, dataset, cfg, threads=1)
    assert len(fitted.gaussians) == len(toy_scene.gaussians)
    after = np.mean([psnr(render(fitted, cam), gt) for cam, gt in dataset])
    assert after - before >= 10.0


def random_frosted_scene(seed: int, count: int):
    """A few degree-one Gaussians with random parameters in one triangle cell."""
    rng = np.random.default_rng(seed)
    mesh = TriMesh(vertices=[[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]], faces=[[0, 1, 2]])
    layer = build_layer(mesh, np.full(3, -0.2), np.full(3, 0.2))
    rotations = rng.normal(size=(count, 4))
    gaussians = FrostedGaussians(
        cell_indices=np.zeros(count, dtype=np.int64),
        bary_logits=rng.normal(size=(count, 6)),
        log_scales=np.log(rng.uniform(0.15, 0.4, size=(count, 3))),
        rotations=rotations / np.linalg.norm(rotations, axis=1, keepdims=True),
        opacity_logits=rng.normal(size=count),
        residual_rotations=np.tile([1.0, 0.0, 0.0, 0.0], (count, 1)),
        sh=rng.normal(scale=0.2, size=(count, 4, 3)),
        sh_degree=1,
    )
    return FrostingScene(mesh=mesh, layer=layer, gaussians=gaussians, background=rng.uniform(size=3))


def test_gradient_check_applies_group_tolerances(tiny_scene, front_camera, random_target):
    report = gradient_check(tiny_scene, front_camera, random_target, samples_per_group=8)
    assert report.groups["rotations"].tolerance == 1e-2
    assert report.groups["sh"].tolerance == 1e-3
    assert report.checked == sum(g.checked for g in report.groups.values())
    assert report.failures == []
    assert report.pass_fraction == 1.0
    assert report.passed


def test_gradient_check_lists_failures(tiny_scene, front_camera, random_target):
    # NOTHING SURVIVES A TOLERANCE BELOW FINITE-DIFFERENCE TRUNCATION ERROR
    report = gradient_check(
        tiny_scene, front_camera, random_target, samples_per_group=4,
        tolerance=1e-15, rotation_tolerance=1e-15, absolute_floor=1e-300,
    )
    assert not report.passed
    assert len(report.failures) == sum(g.failed for g in report.groups.values())
    assert report.pass_fraction == pytest.approx(1.0 - len(report.failures) / report.checked)
    for failure in report.failures:
        assert failure.relative_error > report.groups[failure.group].tolerance
        assert failure.index < getattr(tiny_scene.gaussians, failure.group).size


def test_gradient_check_needs_a_sample(tiny_scene, front_camera, random_target):
    with pytest.raises(ValueError):
        gradient_check(tiny_scene, front_camera, random_target, samples_per_group=0)


def test_gradients_pass_on_random_scenes():
    cam = look_at_camera((0.0, 0.0, 3.0), up=(0.0, 1.0, 0.0), width=32, height=32)
    checked = failed = 0
    for seed in range(10):
        scene = random_frosted_scene(seed, count=4 + seed)
        target = Image(pixels=np.random.default_rng(100 + seed).uniform(size=(32, 32, 3)))
        report = gradient_check(scene, cam, target, samples_per_group=6, seed=seed)
        checked += report.checked
        failed += len(report.failures)
    assert 1.0 - failed / checked >= 0.95


def test_occluded_gaussian_gets_no_gradient(front_camera):
    # FOUR WIDE OPAQUE GAUSSIANS ON THE OUTER FACE, ONE SMALL GAUSSIAN ON THE INNER FACE
    mesh = TriMesh(vertices=[[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]], faces=[[0, 1, 2]])
    layer = build_layer(mesh, np.full(3, -0.1), np.full(3, 0.1))
    rng = np.random.default_rng(5)
    outer, inner = [5.0, 5.0, 5.0, -5.0, -5.0, -5.0], [-5.0, -5.0, -5.0, 5.0, 5.0, 5.0]
    gaussians = FrostedGaussians(
        cell_indices=np.zeros(5, dtype=np.int64),
        bary_logits=[outer] * 4 + [inner],
        log_scales=np.log([[50.0] * 3] * 4 + [[0.2] * 3]),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (5, 1)),
        opacity_logits=[40.0] * 4 + [2.0],
        residual_rotations=np.tile([1.0, 0.0, 0.0, 0.0], (5, 1)),
        sh=rng.normal(scale=0.3, size=(5, 4, 3)),
        sh_degree=1,
    )
    scene = FrostingScene(mesh=mesh, layer=layer, gaussians=gaussians, background=[0.0, 0.0, 0.0])
    target = Image(pixels=rng.uniform(size=(front_camera.height, front_camera.width, 3)))

    loss, grads = loss_and_gradients(scene, front_camera, target)
    for name, grad in grads.as_dict().items():
        assert np.max(np.abs(grad[4])) < 1e-8, name
    assert np.max(np.abs(grads.sh[:4])) > 0.0

    eps = 1e-4
    for name in ("opacity_logits", "sh", "bary_logits"):
        values = np.array(getattr(gaussians, name))
        for sign in (1.0, -1.0):
            bumped = values.copy()
            bumped[4] = bumped[4] + sign * eps
            shifted, _ = loss_and_gradients(
                scene.with_gaussians(gaussians.replace(**{name: bumped})), front_camera, target
            )
            assert abs(shifted - loss) < 1e-8, name


@pytest.mark.slow
def test_gradients_pass_on_random_scenes_at_full_size():
    cam = look_at_camera((0.0, 0.0, 3.0), up=(0.0, 1.0, 0.0), width=32, height=32)
    checked = failed = 0
    for seed in range(10):
        scene = random_frosted_scene(1000 + seed, count=100)
        target = Image(pixels=np.random.default_rng(200 + seed).uniform(size=(32, 32, 3)))
        report = gradient_check(scene, cam, target, samples_per_group=20, seed=seed)
        checked += report.checked
        failed += len(report.failures)
    assert 1.0 - failed / checked >= 0.95
