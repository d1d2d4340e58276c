# File: services/depth_advisor.py
import logging
import math
from typing import Optional, Union

import numpy as np
from scipy.spatial import cKDTree

from schemas.depth_schema import ComplexityScore, DepthAdvice
from schemas.errors import DegenerateBoundingBox, NonPositiveInput, TooFewGaussians
from schemas.gaussian_schema import GaussianCloud
from services.runtime import resolve_threads

logger = logging.getLogger(__name__)

MIN_GAUSSIANS = 10
DEFAULT_GAMMA = 100.0
DEFAULT_DEPTH = 10
DEFAULT_QUANTILE = 0.1
POWER_OF_TWO_RTOL = 1e-12


def point_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance, written out so every caller rounds the same way."""
    return np.sqrt(np.sum((a - b) ** 2, axis=-1))


def nearest_neighbor_distances(
    cloud: Union[GaussianCloud, np.ndarray], threads: Optional[int] = None
) -> np.ndarray:
    """Distance from every center to its nearest other center."""
    means = cloud.means if isinstance(cloud, GaussianCloud) else np.asarray(cloud, dtype=np.float64)
    if len(means) < 2:
        raise TooFewGaussians(len(means), 2)
    tree = cKDTree(means)
    _, idx = tree.query(means, k=2, workers=resolve_threads(threads))
    own = np.arange(len(means))
    # WITH DUPLICATE CENTERS THE FIRST HIT MAY BE ANOTHER POINT
    other = np.where(idx[:, 0] == own, idx[:, 1], idx[:, 0])
    return point_distances(means, means[other])


def nearest_rank_quantile(values: np.ndarray, q: float) -> float:
    """Nearest-rank quantile: the ceil(q n)-th smallest value."""
    ordered = np.sort(values)
    rank = max(1, math.ceil(round(q * len(ordered), 9)))
    return float(ordered[rank - 1])


def complexity_score(
    cloud: GaussianCloud,
    quantile: float = DEFAULT_QUANTILE,
    threads: Optional[int] = None,
) -> ComplexityScore:
    if len(cloud) < MIN_GAUSSIANS:
        raise TooFewGaussians(len(cloud), MIN_GAUSSIANS)
    means = cloud.means
    l_box = float(np.max(means.max(axis=0) - means.min(axis=0)))
    if l_box <= 1e-12:
        raise DegenerateBoundingBox(f"longest bounding-box edge {l_box:.3e} is degenerate")
    d_q = nearest_rank_quantile(nearest_neighbor_distances(means, threads), quantile)
    return ComplexityScore(cs=d_q / l_box, l_box=l_box, spacing=d_q, quantile=quantile)


def optimal_depth(cs: float, gamma: float = DEFAULT_GAMMA, max_depth: int = DEFAULT_DEPTH) -> int:
    return max(1, min(max_depth, raw_depth(cs, gamma)))


def raw_depth(cs: float, gamma: float = DEFAULT_GAMMA) -> int:
    if not gamma > 0.0:
        raise NonPositiveInput("gamma", gamma)
    if not cs > 0.0:
        raise NonPositiveInput("cs", cs)
    product = gamma * cs
    value = -math.log2(product)
    nearest = round(value)
    # A PRODUCT WITHIN ROUNDING OF 2^-n IS 2^-n
    if np.isclose(product, 2.0**-nearest, rtol=POWER_OF_TWO_RTOL, atol=0.0):
        return int(nearest)
    return math.floor(value)


def advise_depth(
    cloud: GaussianCloud,
    gamma: float = DEFAULT_GAMMA,
    default_depth: int = DEFAULT_DEPTH,
    quantile: float = DEFAULT_QUANTILE,
    threads: Optional[int] = None,
) -> DepthAdvice:
    score = complexity_score(cloud, quantile=quantile, threads=threads)
    cs = score.cs
    if cs == 0.0 and gamma > 0.0:
        # MORE THAN A QUANTILE OF COINCIDENT MEANS: FINEST ALLOWED DEPTH
        logger.warning(f"⚠️ Complexity score is zero (duplicate means); using depth {default_depth}")
        unclamped = default_depth
    else:
        unclamped = raw_depth(cs, gamma)
    depth = max(1, min(default_depth, unclamped))
    if depth != unclamped:
        logger.info(f"Clamped depth {unclamped} -> {depth}")
    logger.info(f"✅ Complexity score {cs:.6g} over {len(cloud)} Gaussians -> depth {depth}")
    return DepthAdvice(
        cs=cs,
        l_box=score.l_box,
        gamma=gamma,
        raw_depth=unclamped,
        depth=depth,
        gaussian_count=len(cloud),
    )


if __name__ == "__main__":
    from services.toy_scene import sphere_clouds

    # RUN with this command:
    # python -m services.depth_advisor

    logging.basicConfig(level=logging.INFO)
    for count in (500, 5000, 50000):
        _, regularized = sphere_clouds(count)
        advice = advise_depth(regularized)
        print(f"{count:>6} Gaussians: cs {advice.cs:.5f}, depth {advice.depth}")
