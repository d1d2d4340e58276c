# File: tests/conftest.py
import numpy as np
import pytest

from schemas.config_schema import SamplingConfig
from schemas.frosted_schema import FrostedGaussians
from schemas.gaussian_schema import CloudRole, GaussianCloud, sh_coefficient_count
from schemas.layer_schema import ContractionParams
from schemas.mesh_schema import TriMesh
from schemas.scene_schema import FrostingScene
from services.cells_service import build_layer
from services.sampling_service import sample_gaussians
from services.scene_model import SH_C0
from services.toy_scene import grid_plane, icosphere, look_at_camera, sphere_clouds

# sigmoid(40) rounds to exactly 1.0 in float64
OPAQUE_LOGIT = 40.0


def make_cloud(
    means,
    scales=1.0,
    rotations=None,
    opacity_logits=OPAQUE_LOGIT,
    sh_degree: int = 0,
    colors=None,
    role: CloudRole = CloudRole.unconstrained,
) -> GaussianCloud:
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    n = len(means)
    scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (n, 3))
    if rotations is None:
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    sh = np.zeros((n, sh_coefficient_count(sh_degree), 3))
    if colors is not None:
        sh[:, 0, :] = (np.broadcast_to(colors, (n, 3)) - 0.5) / SH_C0
    return GaussianCloud(
        means=means,
        log_scales=np.log(scales),
        rotations=rotations,
        opacity_logits=np.broadcast_to(np.asarray(opacity_logits, dtype=np.float64), (n,)),
        sh=sh,
        sh_degree=sh_degree,
        role=role,
    )


@pytest.fixture(scope="session")
def cloud_factory():
    return make_cloud


@pytest.fixture(scope="session")
def triangle_mesh():
    """One right triangle in z = 0, normal +z."""
    return TriMesh(
        vertices=[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        faces=[[0, 1, 2]],
    )


@pytest.fixture(scope="session")
def plane_mesh():
    return grid_plane(4)


@pytest.fixture(scope="session")
def sphere_mesh():
    return icosphere(1)


@pytest.fixture(scope="session")
def toy_clouds():
    return sphere_clouds(800)


@pytest.fixture(scope="session")
def toy_scene(sphere_mesh, toy_clouds):
    unconstrained, _ = toy_clouds
    n = sphere_mesh.vertex_count
    layer = build_layer(sphere_mesh, np.full(n, -0.05), np.full(n, 0.05))
    contraction = ContractionParams(center=np.zeros(3), radius=2.0)
    cfg = SamplingConfig(budget=200, seed=0, contraction=contraction)
    gaussians = sample_gaussians(layer, unconstrained, cfg, threads=1)
    return FrostingScene(
        mesh=sphere_mesh,
        layer=layer,
        gaussians=gaussians,
        background=[0.1, 0.2, 0.3],
        contraction=contraction,
        seed=0,
    )


@pytest.fixture(scope="session")
def camera():
    return look_at_camera((3.0, 0.5, 1.5), width=32, height=32)


@pytest.fixture(scope="session")
def front_camera():
    return look_at_camera((0.0, 0.0, 3.0), up=(0.0, 1.0, 0.0), width=16, height=16, name="front")


@pytest.fixture(scope="session")
def tiny_scene():
    """Three degree-one Gaussians in a single cell facing `front_camera`."""
    mesh = TriMesh(vertices=[[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0]], faces=[[0, 1, 2]])
    layer = build_layer(mesh, np.full(3, -0.1), np.full(3, 0.1))
    rng = np.random.default_rng(7)
    rotations = rng.normal(size=(3, 4))
    residual = np.tile([1.0, 0.0, 0.0, 0.0], (3, 1))
    residual[1] = [np.cos(0.3), 0.0, np.sin(0.3), 0.0]
    sh = np.concatenate([rng.normal(scale=0.2, size=(3, 1, 3)), rng.normal(scale=0.1, size=(3, 3, 3))], axis=1)
    gaussians = FrostedGaussians(
        cell_indices=np.zeros(3, dtype=np.int64),
        bary_logits=rng.normal(size=(3, 6)),
        log_scales=np.log(np.full((3, 3), 0.3)),
        rotations=rotations / np.linalg.norm(rotations, axis=1, keepdims=True),
        opacity_logits=[0.5, 1.0, -0.5],
        residual_rotations=residual,
        sh=sh,
        sh_degree=1,
    )
    return FrostingScene(mesh=mesh, layer=layer, gaussians=gaussians, background=[0.2, 0.2, 0.2])
