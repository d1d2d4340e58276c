# File: services/thickness_service.py
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree
from tqdm import tqdm

from schemas.config_schema import ThicknessConfig
from schemas.errors import ShiftLengthMismatch
from schemas.gaussian_schema import GaussianCloud
from schemas.layer_schema import FrostingLayer, VertexShiftRecord
from schemas.mesh_schema import TriMesh
from services.cells_service import (
    cell_bounds,
    cell_corners,
    cell_volumes,
    degenerate_mask,
    points_in_cells,
)
from services.runtime import parallel_map
from services.scene_model import DensityField, cloud_covariances, covariance
from services.spatial_hash import SpatialHash

logger = logging.getLogger(__name__)

SEARCH_SIGMAS = 3.0
VERTEX_CHUNK = 256


def isosurface_intervals(
    field: DensityField,
    origins: np.ndarray,
    normals: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    level: float,
    samples: int = 64,
    bisection_iters: int = 20,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched {t in [lo, hi] : d(o + t n) >= level} bounds along many normals.

    Returns (t_min, t_max, found). Each bound is the outermost uniform sample above the
    level, pushed outward by bisection toward the neighbouring sample below it. Bounds
    stay on the inside of the level set.
    """
    m = origins.shape[0]
    steps = np.linspace(0.0, 1.0, samples)
    ts = np.clip(lo[:, None] + (hi - lo)[:, None] * steps[None, :], lo[:, None], hi[:, None])
    ts[:, 0], ts[:, -1] = lo, hi
    points = origins[:, None, :] + ts[..., None] * normals[:, None, :]
    inside = field.evaluate(points.reshape(-1, 3)).reshape(m, samples) >= level
    found = inside.any(axis=1)

    first = np.argmax(inside, axis=1)
    last = samples - 1 - np.argmax(inside[:, ::-1], axis=1)
    rows = np.arange(m)
    t_min = ts[rows, first].copy()
    t_max = ts[rows, last].copy()

    # BISECT BOTH ENDS AT ONCE: (row, inside t, outside t)
    open_lo = found & (first > 0)
    open_hi = found & (last < samples - 1)
    which = np.concatenate([np.flatnonzero(open_lo), np.flatnonzero(open_hi)])
    t_in = np.concatenate([ts[open_lo, first[open_lo]], ts[open_hi, last[open_hi]]])
    t_out = np.concatenate([ts[open_lo, first[open_lo] - 1], ts[open_hi, last[open_hi] + 1]])
    for _ in range(bisection_iters):
        if not len(which):
            break
        mid = 0.5 * (t_in + t_out)
        hit = field.evaluate(origins[which] + mid[:, None] * normals[which]) >= level
        t_in = np.where(hit, mid, t_in)
        t_out = np.where(hit, t_out, mid)
    n_lo = int(open_lo.sum())
    t_min[open_lo] = t_in[:n_lo]
    t_max[open_hi] = t_in[n_lo:]
    return t_min, t_max, found


def isosurface_interval(
    cloud: Union[GaussianCloud, DensityField],
    v,
    n,
    search: Tuple[float, float],
    level: float,
    samples: int = 64,
    bisection_iters: int = 20,
) -> Optional[Tuple[float, float]]:
    field = cloud if isinstance(cloud, DensityField) else DensityField(cloud)
    t_min, t_max, found = isosurface_intervals(
        field,
        np.asarray(v, dtype=np.float64)[None],
        np.asarray(n, dtype=np.float64)[None],
        np.array([float(search[0])]),
        np.array([float(search[1])]),
        level,
        samples,
        bisection_iters,
    )
    if not found[0]:
        return None
    return float(t_min[0]), float(t_max[0])


def normal_std(regularized: GaussianCloud, v, n, tree: Optional[cKDTree] = None) -> float:
    """Std along n of the regularized Gaussian whose center is nearest to v."""
    tree = tree or cKDTree(regularized.means)
    _, idx = tree.query(np.asarray(v, dtype=np.float64))
    cov = covariance(regularized[int(idx)])
    n = np.asarray(n, dtype=np.float64)
    return float(np.sqrt(n @ cov @ n))


class ShiftEstimator:
    """Holds the density fields and lookup tree shared by every vertex of one mesh."""

    def __init__(self, unconstrained: GaussianCloud, regularized: GaussianCloud, cfg: ThicknessConfig):
        self.cfg = cfg
        self.unconstrained = DensityField(unconstrained)
        self.regularized = DensityField(regularized)
        self.tree = cKDTree(regularized.means)
        self.covariances = cloud_covariances(regularized)

    def normal_stds(self, vertices: np.ndarray, normals: np.ndarray) -> np.ndarray:
        _, idx = self.tree.query(vertices)
        cov = self.covariances[idx]
        return np.sqrt(np.einsum("ni,nij,nj->n", normals, cov, normals))

    def records(
        self, vertices: np.ndarray, normals: np.ndarray, edge_lengths: np.ndarray
    ) -> List[VertexShiftRecord]:
        cfg = self.cfg
        k = cfg.k
        sigma = self.normal_stds(vertices, normals)
        half_search = SEARCH_SIGMAS * sigma
        t_lo, t_hi, reg_found = isosurface_intervals(
            self.regularized,
            vertices,
            normals,
            -half_search,
            half_search,
            cfg.level,
            cfg.samples_per_interval,
            cfg.bisection_iters,
        )
        eps_in = np.where(reg_found, t_lo, 0.0)
        eps_out = np.where(reg_found, t_hi, 0.0)
        eps_mid = np.where(reg_found, (eps_in + eps_out) / 2.0, 0.0)
        # NO REGULARIZED SURFACE NEARBY: SURROGATE HALF THICKNESS FROM SIGMA
        eps_half = np.where(reg_found, (eps_out - eps_in) / 2.0, cfg.fallback_shift * sigma)
        j_lo = eps_mid - k * eps_half
        j_hi = eps_mid + k * eps_half

        fallback_shift = cfg.fallback_shift * edge_lengths
        if cfg.strategy == "regularized_only":
            delta_in = np.where(reg_found, eps_in, np.clip(-fallback_shift, j_lo, j_hi))
            delta_out = np.where(reg_found, eps_out, np.clip(fallback_shift, j_lo, j_hi))
            unc_found = reg_found
        else:
            v_lo, v_hi, unc_found = isosurface_intervals(
                self.unconstrained,
                vertices,
                normals,
                j_lo,
                j_hi,
                cfg.level,
                cfg.samples_per_interval,
                cfg.bisection_iters,
            )
            delta_in = np.where(unc_found, v_lo, np.clip(-fallback_shift, j_lo, j_hi))
            delta_out = np.where(unc_found, v_hi, np.clip(fallback_shift, j_lo, j_hi))

        records = []
        for i in range(vertices.shape[0]):
            mid, half = float(eps_mid[i]), float(eps_half[i])
            records.append(
                VertexShiftRecord(
                    sigma=float(sigma[i]),
                    interval_I=(-float(half_search[i]), float(half_search[i])),
                    eps_in=float(eps_in[i]),
                    eps_out=float(eps_out[i]),
                    eps_mid=mid,
                    eps_half=half,
                    interval_J=(mid - k * half, mid + k * half),
                    delta_in=float(delta_in[i]),
                    delta_out=float(delta_out[i]),
                    k=k,
                    regularized_fallback=not bool(reg_found[i]),
                    unconstrained_fallback=not bool(unc_found[i]),
                )
            )
        return records


def compute_vertex_shift(
    unconstrained: GaussianCloud,
    regularized: GaussianCloud,
    v,
    n,
    cfg: Optional[ThicknessConfig] = None,
    mean_edge_length: float = 0.0,
) -> VertexShiftRecord:
    estimator = ShiftEstimator(unconstrained, regularized, cfg or ThicknessConfig())
    return estimator.records(
        np.asarray(v, dtype=np.float64)[None],
        np.asarray(n, dtype=np.float64)[None],
        np.array([float(mean_edge_length)]),
    )[0]


def _constant_records(records: List[VertexShiftRecord], quantile: float) -> List[VertexShiftRecord]:
    """Replace every shift pair by the per-side quantile of the adaptive shifts."""
    const_in = float(np.quantile([r.delta_in for r in records], quantile))
    const_out = float(np.quantile([r.delta_out for r in records], quantile))
    result = []
    for r in records:
        # WIDEN J THROUGH eps_half SO IT STILL CONTAINS THE CONSTANT SHIFTS
        needed = max(r.eps_mid - const_in, const_out - r.eps_mid, 0.0) / r.k
        half = max(r.eps_half, needed)
        j = (r.eps_mid - r.k * half, r.eps_mid + r.k * half)
        if not (j[0] <= const_in and const_out <= j[1]):
            half = np.nextafter(half, np.inf)
            j = (r.eps_mid - r.k * half, r.eps_mid + r.k * half)
        result.append(
            VertexShiftRecord(
                **{
                    **r.model_dump(),
                    "eps_half": half,
                    "interval_J": j,
                    "delta_in": const_in,
                    "delta_out": const_out,
                }
            )
        )
    return result


def compute_shifts(
    unconstrained: GaussianCloud,
    regularized: GaussianCloud,
    mesh: TriMesh,
    cfg: Optional[ThicknessConfig] = None,
    threads: Optional[int] = None,
) -> List[VertexShiftRecord]:
    """One record per mesh vertex, in vertex order regardless of thread count."""
    cfg = cfg or ThicknessConfig()
    estimator = ShiftEstimator(unconstrained, regularized, cfg)
    edge_lengths = mesh.mean_incident_edge_lengths()
    chunks = [
        slice(start, min(start + VERTEX_CHUNK, mesh.vertex_count))
        for start in range(0, mesh.vertex_count, VERTEX_CHUNK)
    ]
    progress = tqdm(
        total=mesh.vertex_count, desc="Estimating thickness", unit="vertex", leave=False, disable=None
    )

    def run_chunk(chunk: slice) -> List[VertexShiftRecord]:
        records = estimator.records(
            mesh.vertices[chunk], mesh.normals[chunk], edge_lengths[chunk]
        )
        progress.update(len(records))
        return records

    try:
        records = [r for chunk in parallel_map(run_chunk, chunks, threads) for r in chunk]
    finally:
        progress.close()

    if cfg.strategy == "constant" and records:
        records = _constant_records(records, cfg.constant_quantile)

    reg_fallbacks = sum(r.regularized_fallback for r in records)
    unc_fallbacks = sum(r.unconstrained_fallback for r in records)
    if reg_fallbacks or unc_fallbacks:
        logger.warning(
            f"⚠️ Fallback shifts: {reg_fallbacks} vertices without regularized surface, "
            f"{unc_fallbacks} without unconstrained surface"
        )
    logger.info(f"✅ Computed shifts for {len(records)} vertices ({cfg.strategy})")
    return records


def thickness_per_vertex(source: Union[FrostingLayer, Sequence[VertexShiftRecord]]) -> np.ndarray:
    """delta_out - delta_in for every vertex of a layer or a list of shift records."""
    if isinstance(source, FrostingLayer):
        return source.delta_out - source.delta_in
    return np.array([r.delta_out - r.delta_in for r in source], dtype=np.float64)


# SHIFT GROWTH


def find_engulfed(mesh: TriMesh, delta_in: np.ndarray, delta_out: np.ndarray):
    """Bound vertices lying strictly inside a cell whose face does not contain them.

    Returns (vertex, side, face) arrays; side 0 is the inner bound, 1 the outer.
    """
    corners = cell_corners(mesh, delta_in, delta_out)
    volumes = cell_volumes(corners)
    live = np.flatnonzero(~degenerate_mask(corners, volumes)) if len(corners) else np.zeros(0, dtype=np.int64)
    empty = np.zeros(0, dtype=np.int64)
    if not len(live):
        return empty, empty, empty
    lo, hi = cell_bounds(corners[live])
    grid = SpatialHash(lo, hi)

    inner = mesh.vertices + delta_in[:, None] * mesh.normals
    outer = mesh.vertices + delta_out[:, None] * mesh.normals
    points = np.concatenate([inner, outer])
    point_ids, cand = grid.candidate_pairs(points)
    faces = live[cand]
    vertex_ids = point_ids % mesh.vertex_count
    incident = np.any(mesh.faces[faces] == vertex_ids[:, None], axis=1)
    point_ids, faces, vertex_ids = point_ids[~incident], faces[~incident], vertex_ids[~incident]
    hit = points_in_cells(points[point_ids], corners[faces], strict=True)
    return vertex_ids[hit], point_ids[hit] // mesh.vertex_count, faces[hit]


def grow_shifts(
    mesh: TriMesh,
    targets: Sequence[VertexShiftRecord],
    steps: int = 10,
) -> List[VertexShiftRecord]:
    """Grow shifts from zero toward their targets, freezing any bound that would engulf another."""
    if len(targets) != mesh.vertex_count:
        raise ShiftLengthMismatch(mesh.vertex_count, len(targets))
    target = np.array([[r.delta_in for r in targets], [r.delta_out for r in targets]])
    current = np.zeros_like(target)
    frozen = np.zeros(target.shape, dtype=bool)

    for step in range(1, steps + 1):
        scale = 1.0 if step == steps else step / steps
        proposed = np.where(frozen, current, target * scale)
        for _ in range(4 * mesh.vertex_count + 8):
            moved = proposed != current
            # KEEP delta_in <= delta_out
            disorder = proposed[0] > proposed[1]
            if disorder.any():
                revert = moved & disorder[None, :]
                proposed[revert] = current[revert]
                frozen |= revert
                continue
            vertices, sides, faces = find_engulfed(mesh, proposed[0], proposed[1])
            if not len(vertices):
                break
            revert = np.zeros_like(frozen)
            own = moved[sides, vertices]
            revert[sides[own], vertices[own]] = True
            # THE VIOLATING BOUND DID NOT MOVE: THE ENGULFING CELL GREW OVER IT
            for face in faces[~own]:
                revert[:, mesh.faces[face]] |= moved[:, mesh.faces[face]]
            if not revert.any():
                logger.warning("⚠️ Engulfed bounds with no moved corner left; keeping them")
                break
            proposed[revert] = current[revert]
            frozen |= revert
        current = proposed
        logger.debug(f"Growth step {step}/{steps}: {int(frozen.sum())} frozen bounds")

    frozen_count = int(frozen.any(axis=0).sum())
    if frozen_count:
        logger.info(f"Froze {frozen_count} vertices before reaching their target shifts")
    return [
        r.model_copy(update={"delta_in": float(current[0, i]), "delta_out": float(current[1, i])})
        for i, r in enumerate(targets)
    ]


if __name__ == "__main__":
    import time

    from services.toy_scene import icosphere, sphere_clouds

    # RUN with this command:
    # python -m services.thickness_service

    logging.basicConfig(level=logging.INFO)
    mesh = icosphere(2)
    unconstrained, regularized = sphere_clouds(3000)
    start = time.perf_counter()
    targets = compute_shifts(unconstrained, regularized, mesh, ThicknessConfig())
    grown = grow_shifts(mesh, targets)
    thickness = thickness_per_vertex(grown)
    print(f"{mesh.vertex_count} vertices in {time.perf_counter() - start:.2f}s")
    print(f"thickness min {thickness.min():.4f} median {np.median(thickness):.4f} max {thickness.max():.4f}")
