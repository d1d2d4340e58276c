# File: services/toy_scene.py
import logging
import math
from typing import List, Tuple

import numpy as np

from schemas.gaussian_schema import CloudRole, GaussianCloud, sh_coefficient_count
from schemas.mesh_schema import TriMesh
from schemas.scene_schema import Camera
from services.scene_model import SH_C0, matrices_to_quaternions

logger = logging.getLogger(__name__)


def icosphere(subdivisions: int = 2, radius: float = 1.0) -> TriMesh:
    """Unit icosahedron refined by edge midpoints, projected to the sphere."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    vertices = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in vertices]
    for _ in range(subdivisions):
        midpoints = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoints[key] = len(verts) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = refined
    return TriMesh(vertices=np.array(verts) * radius, faces=np.array(faces))


def grid_plane(n: int = 8, size: float = 2.0) -> TriMesh:
    """Flat n x n quad grid in the z = 0 plane, normals +z."""
    xs = np.linspace(-size / 2, size / 2, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    faces = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 1, a + n + 2
            faces += [[a, b, d], [a, d, c]]
    return TriMesh(vertices=vertices, faces=np.array(faces))


def frames_from_normals(normals: np.ndarray) -> np.ndarray:
    """Rotation matrices whose third column is the given unit normal."""
    helper = np.where(np.abs(normals[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
    tangent = np.cross(helper, normals)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    bitangent = np.cross(normals, tangent)
    return np.stack([tangent, bitangent, normals], axis=2)


def sphere_clouds(
    count: int = 2000,
    radius: float = 1.0,
    sh_degree: int = 0,
    seed: int = 0,
) -> Tuple[GaussianCloud, GaussianCloud]:
    """(unconstrained, regularized) clouds on a sphere.

    Regularized Gaussians are flat and lie on the surface; unconstrained ones are rounder and
    jittered along the normal, so the unconstrained density reaches further out and in.
    """
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    spacing = radius * math.sqrt(4.0 * math.pi / count)
    frames = frames_from_normals(directions)
    quats = matrices_to_quaternions(frames)
    k = sh_coefficient_count(sh_degree)

    # COLOR VARIES SMOOTHLY WITH DIRECTION
    rgb = 0.5 + 0.4 * directions[:, [0, 1, 2]] * np.array([1.0, -1.0, 0.5])
    sh = np.zeros((count, k, 3))
    sh[:, 0, :] = (rgb - 0.5) / SH_C0

    regularized = GaussianCloud(
        means=directions * radius,
        log_scales=np.log(np.tile([spacing, spacing, 0.05 * spacing], (count, 1))),
        rotations=quats,
        opacity_logits=np.full(count, 4.0),
        sh=sh,
        sh_degree=sh_degree,
        role=CloudRole.regularized,
    )
    jitter = rng.normal(scale=0.1 * spacing, size=(count, 1))
    unconstrained = GaussianCloud(
        means=directions * (radius + jitter),
        log_scales=np.log(np.tile([spacing, spacing, 0.4 * spacing], (count, 1))),
        rotations=quats,
        opacity_logits=np.full(count, 2.0),
        sh=sh,
        sh_degree=sh_degree,
        role=CloudRole.unconstrained,
    )
    return unconstrained, regularized


def look_at_camera(
    eye,
    target=(0.0, 0.0, 0.0),
    up=(0.0, 0.0, 1.0),
    width: int = 64,
    height: int = 64,
    fov_x: float = math.radians(50.0),
    name: str = "camera",
) -> Camera:
    """Camera at `eye` looking at `target`; image y points down."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, [0.0, 1.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye
    focal = width / (2.0 * math.tan(fov_x / 2.0))
    return Camera(
        name=name,
        world_to_camera=w2c,
        fx=focal,
        fy=focal,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
    )


def orbit_cameras(
    count: int = 8, distance: float = 4.0, elevation: float = 0.3, width: int = 64, height: int = 64
) -> List[Camera]:
    cameras = []
    for i in range(count):
        angle = 2.0 * math.pi * i / count
        eye = distance * np.array(
            [math.cos(angle) * math.cos(elevation), math.sin(angle) * math.cos(elevation), math.sin(elevation)]
        )
        cameras.append(look_at_camera(eye, width=width, height=height, name=f"view_{i:03d}"))
    return cameras
