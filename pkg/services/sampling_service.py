# File: services/sampling_service.py
import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from schemas.config_schema import SamplingConfig
from schemas.errors import EmptyLayer
from schemas.frosted_schema import FrostedGaussians
from schemas.gaussian_schema import GaussianCloud
from schemas.layer_schema import FrostingLayer
from services.cells_service import contracted_volumes, default_contraction
from services.runtime import resolve_threads

logger = logging.getLogger(__name__)

INITIAL_OPACITY = 0.1
LOGIT_FLOOR = 1e-8
NEIGHBORS_FOR_SCALE = 3
# SMALLEST SQUARED SPACING USED FOR THE INITIAL SCALE
MIN_SPACING_SQ = 1e-7


def sample_simplex6(rng: np.random.Generator, count: Optional[int] = None) -> np.ndarray:
    """Uniform point(s) on the 5-simplex: a flat Dirichlet draw."""
    return rng.dirichlet(np.ones(6), size=count)


def uniform_count(budget: int, uniform_fraction: float) -> int:
    return min(budget, math.ceil(round(uniform_fraction * budget, 9)))


def sample_centers(layer: FrostingLayer, cfg: SamplingConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Draw (cell_indices, barycentric coords) for `cfg.budget` Gaussians.

    The first ceil(uniform_fraction * N) samples pick cells uniformly, the rest in proportion
    to contracted cell volume. All draws come from one generator seeded with `cfg.seed`.
    """
    n = cfg.budget
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 6))
    if layer.cell_count == 0:
        raise EmptyLayer("the layer has no cells to sample from")
    rng = np.random.default_rng(cfg.seed)
    n_uniform = uniform_count(n, cfg.uniform_fraction)
    n_volume = n - n_uniform

    uniform_cells = rng.integers(0, layer.cell_count, size=n_uniform)
    if n_volume:
        contraction = cfg.contraction or default_contraction(layer.mesh)
        volumes = contracted_volumes(layer.corners, contraction)
        total = volumes.sum()
        if not total > 0.0:
            raise EmptyLayer("total contracted cell volume is zero")
        volume_cells = rng.choice(layer.cell_count, size=n_volume, p=volumes / total)
    else:
        volume_cells = np.zeros(0, dtype=np.int64)

    cells = np.concatenate([uniform_cells, volume_cells]).astype(np.int64)
    coords = sample_simplex6(rng, n)
    logger.info(
        f"Sampled {n} centers ({n_uniform} uniform, {n_volume} by contracted volume) "
        f"over {layer.cell_count} cells"
    )
    return cells, coords


def initial_log_scales(points: np.ndarray, threads: Optional[int] = None) -> np.ndarray:
    """Isotropic log scale from the mean distance to the nearest sampled neighbours."""
    n = points.shape[0]
    if n < 2:
        return np.full(n, 0.5 * math.log(MIN_SPACING_SQ))
    k = min(NEIGHBORS_FOR_SCALE, n - 1) + 1
    dist, _ = cKDTree(points).query(points, k=k, workers=resolve_threads(threads))
    spacing = np.maximum(dist[:, 1:].mean(axis=1), math.sqrt(MIN_SPACING_SQ))
    return np.log(spacing)


def initialize_gaussians(
    centers: Tuple[np.ndarray, np.ndarray],
    layer: FrostingLayer,
    unconstrained: GaussianCloud,
    cfg: Optional[SamplingConfig] = None,
    threads: Optional[int] = None,
) -> FrostedGaussians:
    """Frosted Gaussians at the sampled centers, colored by the nearest unconstrained Gaussian."""
    cells, coords = centers
    n = len(cells)
    if n == 0:
        return FrostedGaussians.empty(unconstrained.sh_degree)

    positions = np.einsum("nk,nkj->nj", coords, layer.corners[cells])
    _, donors = cKDTree(unconstrained.means).query(positions, workers=resolve_threads(threads))
    log_scale = initial_log_scales(positions, threads)

    gaussians = FrostedGaussians(
        cell_indices=cells,
        bary_logits=np.log(coords + LOGIT_FLOOR),
        log_scales=np.repeat(log_scale[:, None], 3, axis=1),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacity_logits=np.full(n, math.log(INITIAL_OPACITY / (1.0 - INITIAL_OPACITY))),
        residual_rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        sh=unconstrained.sh[donors],
        sh_degree=unconstrained.sh_degree,
    )
    logger.info(f"✅ Initialized {n} frosted Gaussians (SH degree {unconstrained.sh_degree})")
    return gaussians


def sample_gaussians(
    layer: FrostingLayer,
    unconstrained: GaussianCloud,
    cfg: SamplingConfig,
    threads: Optional[int] = None,
) -> FrostedGaussians:
    return initialize_gaussians(sample_centers(layer, cfg), layer, unconstrained, cfg, threads)
