# File: services/scene_model.py
import logging
from typing import Union

import numpy as np

from schemas.errors import DegreeMismatch, ZeroQuaternion
from schemas.gaussian_schema import Gaussian3D, GaussianCloud, sh_coefficient_count
from services.spatial_hash import SpatialHash

logger = logging.getLogger(__name__)

# CONTRIBUTIONS BEYOND THIS MAHALANOBIS DISTANCE ARE DROPPED
DENSITY_CUTOFF = 4.0
QUATERNION_EPS = 1e-12

# REAL SH BASIS CONSTANTS, DEGREES 0..3
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
]
SH_C3 = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
]


# QUATERNIONS ARE (w, x, y, z)
def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms < QUATERNION_EPS):
        raise ZeroQuaternion("quaternion norm below 1e-12")
    return q / norms


def quaternions_to_matrices(q: np.ndarray) -> np.ndarray:
    """(..., 4) quaternions -> (..., 3, 3) rotation matrices."""
    w, x, y, z = np.moveaxis(normalize_quaternions(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def matrices_to_quaternions(m: np.ndarray) -> np.ndarray:
    """(..., 3, 3) rotations -> (..., 4) unit quaternions with w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for i, r in enumerate(flat):
        trace = r[0, 0] + r[1, 1] + r[2, 2]
        # PIVOT ON THE LARGEST OF (trace, diagonal) FOR STABILITY
        pivot = int(np.argmax([trace, r[0, 0], r[1, 1], r[2, 2]]))
        if pivot == 0:
            s = np.sqrt(1.0 + trace) * 2.0
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif pivot == 1:
            s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif pivot == 2:
            s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        q /= np.linalg.norm(q)
        out[i] = -q if q[0] < 0 else q
    return out.reshape(m.shape[:-2] + (4,))


def quaternion_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        -1,
    )


def covariances_from(log_scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """R diag(s^2) R^T for every row."""
    r = quaternions_to_matrices(rotations)
    s2 = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    return np.einsum("nij,nj,nkj->nik", r, s2, r)


def covariance(g: Gaussian3D) -> np.ndarray:
    return covariances_from(g.log_scales[None], g.rotation[None])[0]


def cloud_covariances(cloud: GaussianCloud) -> np.ndarray:
    return covariances_from(cloud.log_scales, cloud.rotations)


def _canonical_order(cloud: GaussianCloud) -> np.ndarray:
    keys = np.column_stack(
        [cloud.means, cloud.log_scales, cloud.rotations, cloud.opacity_logits[:, None]]
    )
    # LEXSORT USES THE LAST KEY AS PRIMARY
    return np.lexsort(keys.T[::-1])


class DensityField:
    """Opacity-weighted Gaussian density of a cloud, truncated at Mahalanobis distance 4.

    Gaussians are stored in a canonical parameter order and summed in that order, so the
    field does not depend on how the input cloud was permuted.
    """

    def __init__(self, cloud: GaussianCloud):
        order = _canonical_order(cloud)
        self.count = len(cloud)
        self.means = cloud.means[order]
        rotations = quaternions_to_matrices(cloud.rotations[order])
        inv_s2 = np.exp(-2.0 * cloud.log_scales[order])
        self.precisions = np.einsum("nij,nj,nkj->nik", rotations, inv_s2, rotations)
        self.opacities = cloud.opacities[order]
        radius = DENSITY_CUTOFF * np.exp(cloud.log_scales[order].max(axis=1))
        self.grid = SpatialHash(self.means - radius[:, None], self.means + radius[:, None])

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        point_ids, gauss_ids = self.grid.candidate_pairs(points)
        if not len(point_ids):
            return np.zeros(points.shape[0])
        delta = points[point_ids] - self.means[gauss_ids]
        mahal2 = np.einsum("ni,nij,nj->n", delta, self.precisions[gauss_ids], delta)
        contrib = np.where(
            mahal2 <= DENSITY_CUTOFF**2,
            self.opacities[gauss_ids] * np.exp(-0.5 * mahal2),
            0.0,
        )
        return np.bincount(point_ids, weights=contrib, minlength=points.shape[0])

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(points)


def density_at(cloud: Union[GaussianCloud, DensityField], point) -> float:
    field = cloud if isinstance(cloud, DensityField) else DensityField(cloud)
    return float(field.evaluate(np.asarray(point, dtype=np.float64)[None])[0])


def eval_sh(degree: int, sh, dirs, xp=np):
    """Evaluate real SH with coefficients `sh` (..., K, 3) at unit directions `dirs` (..., 3).

    `xp` is the array module (numpy or torch) so the differentiable renderer shares this code.
    """
    result = SH_C0 * sh[..., 0, :]
    if degree > 0:
        x, y, z = dirs[..., 0:1], dirs[..., 1:2], dirs[..., 2:3]
        result = (
            result
            - SH_C1 * y * sh[..., 1, :]
            + SH_C1 * z * sh[..., 2, :]
            - SH_C1 * x * sh[..., 3, :]
        )
        if degree > 1:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            result = (
                result
                + SH_C2[0] * xy * sh[..., 4, :]
                + SH_C2[1] * yz * sh[..., 5, :]
                + SH_C2[2] * (2.0 * zz - xx - yy) * sh[..., 6, :]
                + SH_C2[3] * xz * sh[..., 7, :]
                + SH_C2[4] * (xx - yy) * sh[..., 8, :]
            )
            if degree > 2:
                result = (
                    result
                    + SH_C3[0] * y * (3 * xx - yy) * sh[..., 9, :]
                    + SH_C3[1] * xy * z * sh[..., 10, :]
                    + SH_C3[2] * y * (4 * zz - xx - yy) * sh[..., 11, :]
                    + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh[..., 12, :]
                    + SH_C3[4] * x * (4 * zz - xx - yy) * sh[..., 13, :]
                    + SH_C3[5] * z * (xx - yy) * sh[..., 14, :]
                    + SH_C3[6] * x * (xx - 3 * yy) * sh[..., 15, :]
                )
    return result


def sh_to_rgb(raw):
    """Shift by 0.5 and clamp below at 0 (no upper clamp)."""
    shifted = raw + 0.5
    if hasattr(shifted, "clamp"):
        return shifted.clamp(min=0.0)
    return np.maximum(shifted, 0.0)


def sh_radiance(g: Gaussian3D, view_dir) -> np.ndarray:
    expected = sh_coefficient_count(g.sh_degree)
    if g.sh.shape[0] != expected:
        raise DegreeMismatch(expected=3 * expected, got=int(g.sh.size))
    d = np.asarray(view_dir, dtype=np.float64)
    d = d / np.linalg.norm(d)
    return sh_to_rgb(eval_sh(g.sh_degree, g.sh, d))


def unit_directions(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    return vectors / np.where(norms > 0.0, norms, 1.0)
